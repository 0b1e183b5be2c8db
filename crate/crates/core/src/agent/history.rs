//! Chat history and its canonical text rendering.

use std::sync::Arc;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::augment::ImageBuffer;
use crate::parser::{OUTPUT_CLOSE, OUTPUT_OPEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    ToolOutput,
}

impl Role {
    /// Frozen header emitted before each message when rendering.
    pub fn header(self) -> &'static str {
        match self {
            Role::System => "<|system|>\n",
            Role::User => "<|user|>\n",
            Role::Assistant => "<|assistant|>\n",
            Role::ToolOutput => "<|tool|>\n",
        }
    }
}

/// Placeholder written in place of each attached image.
pub const IMAGE_PLACEHOLDER: &str = "<image>";
/// Frozen terminator emitted after each message.
pub const MESSAGE_END: &str = "\n";

/// An image carried by a message, tagged with its generation (0 = query image).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attachment {
    pub generation: u32,
    pub image: Arc<ImageBuffer>,
}

#[derive(Serialize, Deserialize)]
struct AttachmentRepr {
    generation: u32,
    width: u32,
    height: u32,
    sha256: String,
    png_base64: String,
}

impl Serialize for Attachment {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        AttachmentRepr {
            generation: self.generation,
            width: self.image.width(),
            height: self.image.height(),
            sha256: self.image.digest(),
            png_base64: base64::engine::general_purpose::STANDARD.encode(self.image.encode_png()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Attachment {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = AttachmentRepr::deserialize(d)?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&repr.png_base64)
            .map_err(D::Error::custom)?;
        let image = ImageBuffer::decode(&bytes).map_err(D::Error::custom)?;
        if image.digest() != repr.sha256 {
            return Err(D::Error::custom(
                "attachment digest does not match its pixels",
            ));
        }
        Ok(Attachment {
            generation: repr.generation,
            image: Arc::new(image),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<Attachment>,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
            attachments: Vec::new(),
        }
    }

    pub fn with_image(mut self, generation: u32, image: Arc<ImageBuffer>) -> Self {
        self.attachments.push(Attachment { generation, image });
        self
    }

    /// Message body as it appears in the rendered history, without the
    /// role header or terminator. Tool output is wrapped in `<output>` tags.
    pub fn body(&self) -> String {
        let mut out = String::new();
        if self.role == Role::ToolOutput {
            out.push_str(OUTPUT_OPEN);
        }
        for _ in &self.attachments {
            out.push_str(IMAGE_PLACEHOLDER);
        }
        out.push_str(&self.text);
        if self.role == Role::ToolOutput {
            out.push_str(OUTPUT_CLOSE);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChatHistory {
    messages: Vec<Message>,
}

impl ChatHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_messages(messages: Vec<Message>) -> Self {
        Self { messages }
    }

    pub fn push(&mut self, message: Message) {
        self.messages.push(message);
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn last(&self) -> Option<&Message> {
        self.messages.last()
    }

    pub fn assistant_turns(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .count()
    }

    /// Most recent image attached anywhere in the history.
    pub fn latest_image(&self) -> Option<&Attachment> {
        self.messages
            .iter()
            .rev()
            .find_map(|m| m.attachments.last())
    }

    /// The generation-0 query image.
    pub fn query_image(&self) -> Option<&Attachment> {
        self.messages
            .iter()
            .flat_map(|m| m.attachments.iter())
            .find(|a| a.generation == 0)
    }

    /// Index of the first message produced after the system/user prompt.
    pub fn completion_start(&self) -> usize {
        self.messages
            .iter()
            .position(|m| m.role == Role::Assistant)
            .unwrap_or(self.messages.len())
    }

    /// Generated text with tool outputs inlined and no role delimiters:
    /// the part of the trajectory after the prompt.
    pub fn completion_text(&self) -> String {
        self.messages[self.completion_start()..]
            .iter()
            .map(Message::body)
            .collect()
    }
}

/// Deterministic flattening: each message is its role header, body and a
/// newline. Images appear as `<image>` placeholders.
pub fn render_history(history: &ChatHistory) -> String {
    let mut out = String::new();
    for m in history.messages() {
        out.push_str(m.role.header());
        out.push_str(&m.body());
        out.push_str(MESSAGE_END);
    }
    out
}
