//! Template-based format trajectories: one augmentation call wrapped in the
//! think / code / output / answer layout.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::agent::{
    extract_answer, CallRecord, ChatHistory, EpisodeTrace, ExecRecord, Message, Role, Termination,
};
use crate::augment::{apply_op, AugmentationOp, ExecLimits, FlipAxis, ImageBuffer};
use crate::parser::{extract_call, scan_tags, CODE_CLOSE};
use crate::rewards::fill_template;

/// Prompt for an external rewriter model. Slots: `#QUESTION_HERE`,
/// `#ANSWER_HERE`, `#IMAGE_SIZE_HERE`.
pub const FORMAT_SFT_PROMPT: &str = include_str!("../../assets/prompts/format_sft_v1.txt");

pub const TEMPLATE_IDS: [&str; 2] = ["format_v1", "observe_v1"];

/// One question/answer pair from a QA manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub image: PathBuf,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftTrajectory {
    pub item_id: String,
    pub question: String,
    pub answer: String,
    pub op: AugmentationOp,
    pub template_id: String,
    /// Completion text; the output block follows `</code>` directly, as it
    /// does in a live episode.
    pub text: String,
}

struct Narration {
    problem: &'static str,
    action: String,
    observation: &'static str,
}

fn narrate(op: &AugmentationOp) -> Narration {
    match op {
        AugmentationOp::Rotate { degrees } => Narration {
            problem: "the content is rotated, so it has to be turned upright before it can be read",
            action: format!("rotating the image by {} degrees", degrees.degrees()),
            observation: "the content is upright and legible",
        },
        AugmentationOp::Flip { axis } => Narration {
            problem: "the content appears mirrored, so it has to be flipped back before it can be read",
            action: match axis {
                FlipAxis::Horizontal => "flipping the image horizontally".to_string(),
                FlipAxis::Vertical => "flipping the image vertically".to_string(),
            },
            observation: "the content reads in its normal direction",
        },
        AugmentationOp::Denoise { .. } => Narration {
            problem: "the image is noisy and fine details are hard to make out",
            action: "denoising".to_string(),
            observation: "the noise is suppressed and the details are clearer",
        },
        AugmentationOp::Crop { .. } => Narration {
            problem: "the relevant region occupies a small part of the image",
            action: "cropping to that region".to_string(),
            observation: "the region of interest is isolated",
        },
        AugmentationOp::ResizeUp { .. } => Narration {
            problem: "the relevant details are too small to read at this resolution",
            action: "enlarging the image".to_string(),
            observation: "the details are large enough to read",
        },
        AugmentationOp::ResizeDown { .. } => Narration {
            problem: "the image is large and its overall layout is hard to take in",
            action: "reducing the image size".to_string(),
            observation: "the overall layout is visible at a glance",
        },
        AugmentationOp::Edge => Narration {
            problem: "the outlines in the image are faint",
            action: "extracting edges".to_string(),
            observation: "the contours stand out clearly",
        },
    }
}

fn render_template(template_id: &str, qa: &QaItem, op: &AugmentationOp) -> Result<String, PipelineError> {
    let n = narrate(op);
    let call = format!("image_path = {}", op.render_call("image_path"));
    let answer = qa.answer.trim();
    let text = match template_id {
        "format_v1" => format!(
            "<think>\nFirst, I analyze the problem requirements: the question asks \"{q}\", and {p}.\n\
             The key information needed includes: the content that answers the question.\n\
             <code>\n{call}\n</code><output><image></output>\n\
             After {a}, I observe: {o}. The extracted data shows: {ans}.\n\
             Logically, this leads to: {ans}.\n</think>\n<answer>\n{ans}\n</answer>",
            q = qa.question.trim(),
            p = n.problem,
            a = n.action,
            o = n.observation,
            ans = answer,
        ),
        "observe_v1" => format!(
            "<think>\nLooking at the image, {p}. I will start by {a}.\n\
             <code>\n{call}\n</code><output><image></output>\n\
             Now {o}. Reading it, the answer is {ans}.\n</think>\n<answer>\n{ans}\n</answer>",
            p = n.problem,
            a = n.action,
            o = n.observation,
            ans = answer,
        ),
        other => return Err(PipelineError::TemplateUnknown(other.to_string())),
    };
    Ok(text)
}

pub fn synth_format_trajectory(
    qa: &QaItem,
    op: &AugmentationOp,
    template_id: &str,
) -> Result<SftTrajectory, PipelineError> {
    Ok(SftTrajectory {
        item_id: qa.id.clone(),
        question: qa.question.clone(),
        answer: qa.answer.clone(),
        op: *op,
        template_id: template_id.to_string(),
        text: render_template(template_id, qa, op)?,
    })
}

/// The image to pair with a trajectory: rotations and flips are undone in
/// advance so that the call in the trajectory restores the original view.
pub fn prepare_source(image: &ImageBuffer, op: &AugmentationOp) -> ImageBuffer {
    let inverse = match op {
        AugmentationOp::Rotate { degrees } => AugmentationOp::Rotate { degrees: degrees.inverse() },
        AugmentationOp::Flip { axis } => AugmentationOp::Flip { axis: *axis },
        _ => return image.clone(),
    };
    apply_op(image, &inverse, image, &ExecLimits::default())
        .result
        .expect("rotate and flip always succeed")
}

impl SftTrajectory {
    fn split(&self) -> Result<(&str, &str), PipelineError> {
        let output = "<output><image></output>";
        let close = self
            .text
            .find(CODE_CLOSE)
            .ok_or_else(|| PipelineError::Malformed("no code call".into()))?;
        let (head, tail) = self.text.split_at(close + CODE_CLOSE.len());
        let tail = tail
            .strip_prefix(output)
            .ok_or_else(|| PipelineError::Malformed("output block must follow the call".into()))?;
        Ok((head, tail))
    }

    /// Replays the trajectory as an episode on `source`, executing the call.
    pub fn to_trace(&self, source: &ImageBuffer, limits: &ExecLimits) -> Result<EpisodeTrace, PipelineError> {
        let (head, tail) = self.split()?;
        let body = crate::parser::code_body_before(head, head.len() - CODE_CLOSE.len())
            .ok_or_else(|| PipelineError::Malformed("no code open tag".into()))?;
        let parsed = extract_call(body).map_err(|e| PipelineError::Malformed(e.message))?;
        let outcome = apply_op(source, &parsed.op, source, limits);
        let produced = outcome.result.map_err(|e| PipelineError::Exec(e.to_message()))?;
        let source = Arc::new(source.clone());
        let history = ChatHistory::from_messages(vec![
            Message::new(Role::User, self.question.clone()).with_image(0, source),
            Message::new(Role::Assistant, head),
            Message::new(Role::ToolOutput, "").with_image(1, Arc::new(produced)),
            Message::new(Role::Assistant, tail),
        ]);
        Ok(EpisodeTrace {
            history,
            calls: vec![CallRecord {
                message_index: 1,
                raw_text: body.to_string(),
                parsed: Some(parsed),
                parse_error: None,
                exec: Some(ExecRecord {
                    source_generation: 0,
                    output_generation: Some(1),
                    error: None,
                }),
            }],
            final_answer: extract_answer(tail),
            call_count: 1,
            terminated_by: Termination::Answer,
        })
    }
}

/// Hook for rewriting trajectories with an external model.
pub trait Rewriter: Send + Sync {
    fn rewrite(&self, prompt: &str) -> Result<String, PipelineError>;
}

pub fn format_sft_prompt(qa: &QaItem, width: u32, height: u32) -> String {
    let size = format!("{width}x{height}");
    fill_template(
        FORMAT_SFT_PROMPT,
        &[
            ("#QUESTION_HERE", qa.question.as_str()),
            ("#ANSWER_HERE", qa.answer.as_str()),
            ("#IMAGE_SIZE_HERE", size.as_str()),
        ],
    )
}

/// Asks `rewriter` for a trajectory and accepts it only if it has the
/// required layout and a single call that parses to `op`.
pub fn synth_with_rewriter(
    qa: &QaItem,
    op: &AugmentationOp,
    size: (u32, u32),
    rewriter: &dyn Rewriter,
) -> Result<SftTrajectory, PipelineError> {
    let raw = rewriter.rewrite(&format_sft_prompt(qa, size.0, size.1))?;
    let text = raw.replace("</code>\n<output>", "</code><output>");
    let scan = scan_tags(&text);
    if !(scan.has_think && scan.has_answer) || scan.code_spans.len() != 1 {
        return Err(PipelineError::Malformed("rewrite lacks the think/code/answer layout".into()));
    }
    let body = scan.code_bodies(&text).next().expect("one code span");
    let parsed = extract_call(body).map_err(|e| PipelineError::Malformed(e.message))?;
    if parsed.op != *op {
        return Err(PipelineError::Malformed(format!("rewrite calls {} instead of {op}", parsed.op)));
    }
    let traj = SftTrajectory {
        item_id: qa.id.clone(),
        question: qa.question.clone(),
        answer: qa.answer.clone(),
        op: *op,
        template_id: "rewriter".to_string(),
        text,
    };
    traj.split()?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{Channels, DenoiseMethod, Rotation};
    use crate::rewards::{reward_api, reward_fmt};

    fn qa() -> QaItem {
        QaItem {
            id: "q1".into(),
            image: "img.png".into(),
            question: "What word is written?".into(),
            answer: "HELLO".into(),
            split: None,
            kind: None,
        }
    }

    fn image() -> ImageBuffer {
        ImageBuffer::from_fn(12, 8, Channels::Rgb, |x, y, c| (x * 20 + y * 7 + c as u32 * 3) as u8)
    }

    #[test]
    fn denoise_roundtrip_and_rewards() {
        let op = AugmentationOp::Denoise { method: DenoiseMethod::Gaussian, kernel_size: 3 };
        for id in TEMPLATE_IDS {
            let t = synth_format_trajectory(&qa(), &op, id).unwrap();
            let scan = scan_tags(&t.text);
            let body = scan.code_bodies(&t.text).next().unwrap();
            assert_eq!(extract_call(body).unwrap().op, op);
            let trace = t.to_trace(&image(), &ExecLimits::default()).unwrap();
            assert_eq!(trace.history.completion_text(), t.text);
            assert_eq!(reward_fmt(&trace), 1.0);
            assert_eq!(reward_api(&trace), 1.0);
            assert_eq!(trace.final_answer, "HELLO");
        }
    }

    #[test]
    fn rotation_narrated_and_restored() {
        let op = AugmentationOp::Rotate { degrees: Rotation::Deg90 };
        let t = synth_format_trajectory(&qa(), &op, "format_v1").unwrap();
        assert!(t.text.contains("rotating the image by 90 degrees"));
        let original = image();
        let src = prepare_source(&original, &op);
        assert_ne!(src, original);
        let trace = t.to_trace(&src, &ExecLimits::default()).unwrap();
        assert_eq!(*trace.history.messages()[2].attachments[0].image, original);
    }

    #[test]
    fn unknown_template() {
        let err = synth_format_trajectory(&qa(), &AugmentationOp::Edge, "nope").unwrap_err();
        assert!(matches!(err, PipelineError::TemplateUnknown(_)));
    }

    #[test]
    fn rewriter_validation() {
        struct Fixed(String);
        impl Rewriter for Fixed {
            fn rewrite(&self, prompt: &str) -> Result<String, PipelineError> {
                assert!(prompt.contains("1. Question: What word is written?"));
                assert!(prompt.contains("3. Image dimensions: 12x8"));
                Ok(self.0.clone())
            }
        }
        let op = AugmentationOp::Denoise { method: DenoiseMethod::Gaussian, kernel_size: 5 };
        let good = "<think>\nx\n<code>\nimage_path = denoise(image_path, method=\"gaussian\", kernel_size=5)\n</code>\n<output><image></output>\ny\n</think>\n<answer>\nHELLO\n</answer>";
        let t = synth_with_rewriter(&qa(), &op, (12, 8), &Fixed(good.to_string())).unwrap();
        assert_eq!(reward_fmt(&t.to_trace(&image(), &ExecLimits::default()).unwrap()), 1.0);
        let wrong_op = good.replace("kernel_size=5", "kernel_size=3");
        assert!(synth_with_rewriter(&qa(), &op, (12, 8), &Fixed(wrong_op)).is_err());
        let bare = Fixed("<answer>x</answer>".to_string());
        assert!(synth_with_rewriter(&qa(), &op, (12, 8), &bare).is_err());
    }
}
