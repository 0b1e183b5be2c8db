//! The augmentation vocabulary and its typed parameters.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Exact positive rational scale factor, stored reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "FactorRepr", into = "FactorRepr")]
pub struct Factor {
    num: u32,
    den: u32,
}

#[derive(Serialize, Deserialize)]
struct FactorRepr {
    num: u32,
    den: u32,
}

impl TryFrom<FactorRepr> for Factor {
    type Error = String;
    fn try_from(r: FactorRepr) -> Result<Self, Self::Error> {
        Factor::new(r.num, r.den).ok_or_else(|| format!("invalid factor {}/{}", r.num, r.den))
    }
}

impl From<Factor> for FactorRepr {
    fn from(f: Factor) -> Self {
        FactorRepr {
            num: f.num,
            den: f.den,
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Factor {
    pub const ONE: Factor = Factor { num: 1, den: 1 };

    /// `None` unless both parts are positive.
    pub fn new(num: u32, den: u32) -> Option<Self> {
        if num == 0 || den == 0 {
            return None;
        }
        let g = gcd(num as u64, den as u64) as u32;
        Some(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn from_u64(num: u64, den: u64) -> Option<Self> {
        if num == 0 || den == 0 {
            return None;
        }
        let g = gcd(num, den);
        let (n, d) = (num / g, den / g);
        Some(Self {
            num: u32::try_from(n).ok()?,
            den: u32::try_from(d).ok()?,
        })
    }

    pub fn integer(n: u32) -> Option<Self> {
        Self::new(n, 1)
    }

    pub fn num(self) -> u32 {
        self.num
    }

    pub fn den(self) -> u32 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_one(self) -> bool {
        self.num == self.den
    }

    pub fn cmp_one(self) -> std::cmp::Ordering {
        self.num.cmp(&self.den)
    }

    /// `self` compared with `other` exactly.
    pub fn cmp_exact(self, other: Factor) -> std::cmp::Ordering {
        (self.num as u64 * other.den as u64).cmp(&(other.num as u64 * self.den as u64))
    }

    /// `round(len * factor)`, half away from zero, never below 1.
    pub fn scale_len(self, len: u32) -> u64 {
        let n = len as u64 * self.num as u64;
        let d = self.den as u64;
        ((2 * n + d) / (2 * d)).max(1)
    }
}

/// Renders as an integer, a terminating decimal, or `num/den`.
impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            return write!(f, "{}", self.num);
        }
        let mut d = self.den;
        let (mut twos, mut fives) = (0u32, 0u32);
        while d.is_multiple_of(2) {
            d /= 2;
            twos += 1;
        }
        while d.is_multiple_of(5) {
            d /= 5;
            fives += 1;
        }
        if d != 1 {
            return write!(f, "{}/{}", self.num, self.den);
        }
        let digits = twos.max(fives);
        let scale = 10u64.pow(digits);
        let scaled = self.num as u64 * (scale / self.den as u64);
        let int = scaled / scale;
        let frac = scaled % scale;
        write!(f, "{int}.{frac:0width$}", width = digits as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rotation {
    #[serde(rename = "90")]
    Deg90,
    #[serde(rename = "180")]
    Deg180,
    #[serde(rename = "270")]
    Deg270,
}

impl Rotation {
    pub fn from_degrees(deg: i64) -> Option<Self> {
        match deg {
            90 => Some(Rotation::Deg90),
            180 => Some(Rotation::Deg180),
            270 => Some(Rotation::Deg270),
            _ => None,
        }
    }

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::Deg90 => 90,
            Rotation::Deg180 => 180,
            Rotation::Deg270 => 270,
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            Rotation::Deg90 => Rotation::Deg270,
            Rotation::Deg180 => Rotation::Deg180,
            Rotation::Deg270 => Rotation::Deg90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    /// Mirror left-right.
    Horizontal,
    /// Mirror top-bottom.
    Vertical,
}

impl FlipAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            FlipAxis::Horizontal => "horizontal",
            FlipAxis::Vertical => "vertical",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiseMethod {
    Gaussian,
    Median,
    Bilateral,
}

impl DenoiseMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DenoiseMethod::Gaussian => "gaussian",
            DenoiseMethod::Median => "median",
            DenoiseMethod::Bilateral => "bilateral",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" => Some(DenoiseMethod::Gaussian),
            "median" => Some(DenoiseMethod::Median),
            "bilateral" => Some(DenoiseMethod::Bilateral),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Crop,
    ResizeUp,
    ResizeDown,
    Rotate,
    Flip,
    Denoise,
    Edge,
}

impl OpKind {
    pub const ALL: [OpKind; 7] = [
        OpKind::Crop,
        OpKind::ResizeUp,
        OpKind::ResizeDown,
        OpKind::Rotate,
        OpKind::Flip,
        OpKind::Denoise,
        OpKind::Edge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Crop => "crop",
            OpKind::ResizeUp => "resize_up",
            OpKind::ResizeDown => "resize_down",
            OpKind::Rotate => "rotate",
            OpKind::Flip => "flip",
            OpKind::Denoise => "denoise",
            OpKind::Edge => "edge",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// The set of operations the executor will accept in a given run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Vocabulary(u8);

impl Default for Vocabulary {
    fn default() -> Self {
        Self::all()
    }
}

impl Vocabulary {
    pub fn all() -> Self {
        Vocabulary(OpKind::ALL.iter().fold(0, |m, k| m | k.bit()))
    }

    pub fn empty() -> Self {
        Vocabulary(0)
    }

    pub fn contains(self, kind: OpKind) -> bool {
        self.0 & kind.bit() != 0
    }

    pub fn without(self, kind: OpKind) -> Self {
        Vocabulary(self.0 & !kind.bit())
    }

    pub fn with(self, kind: OpKind) -> Self {
        Vocabulary(self.0 | kind.bit())
    }

    pub fn kinds(self) -> impl Iterator<Item = OpKind> {
        OpKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.kinds())
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let kinds = Vec::<OpKind>::deserialize(d)?;
        Ok(kinds
            .into_iter()
            .fold(Vocabulary::empty(), Vocabulary::with))
    }
}

/// One augmentation request with typed parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentationOp {
    Crop {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
    },
    ResizeUp {
        factor: Factor,
    },
    ResizeDown {
        factor: Factor,
    },
    Rotate {
        degrees: Rotation,
    },
    Flip {
        axis: FlipAxis,
    },
    Denoise {
        method: DenoiseMethod,
        kernel_size: u32,
    },
    Edge,
}

impl AugmentationOp {
    pub fn kind(&self) -> OpKind {
        match self {
            AugmentationOp::Crop { .. } => OpKind::Crop,
            AugmentationOp::ResizeUp { .. } => OpKind::ResizeUp,
            AugmentationOp::ResizeDown { .. } => OpKind::ResizeDown,
            AugmentationOp::Rotate { .. } => OpKind::Rotate,
            AugmentationOp::Flip { .. } => OpKind::Flip,
            AugmentationOp::Denoise { .. } => OpKind::Denoise,
            AugmentationOp::Edge => OpKind::Edge,
        }
    }

    /// Canonical call text, e.g. `denoise(image_path, method="gaussian", kernel_size=3)`.
    /// The call parser accepts everything this produces.
    pub fn render_call(&self, image_arg: &str) -> String {
        match self {
            AugmentationOp::Crop { x0, y0, x1, y1 } => {
                format!("crop({image_arg}, {x0}, {y0}, {x1}, {y1})")
            }
            AugmentationOp::ResizeUp { factor } => {
                format!("resize_up({image_arg}, factor={factor})")
            }
            AugmentationOp::ResizeDown { factor } => {
                format!("resize_down({image_arg}, factor={factor})")
            }
            AugmentationOp::Rotate { degrees } => {
                format!("rotate({image_arg}, degrees={})", degrees.degrees())
            }
            AugmentationOp::Flip { axis } => {
                format!("flip({image_arg}, axis=\"{}\")", axis.as_str())
            }
            AugmentationOp::Denoise {
                method,
                kernel_size,
            } => format!(
                "denoise({image_arg}, method=\"{}\", kernel_size={kernel_size})",
                method.as_str()
            ),
            AugmentationOp::Edge => format!("edge({image_arg})"),
        }
    }
}

impl fmt::Display for AugmentationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_call("image_path"))
    }
}
