//! Class taxonomy shared by CSV columns, probability vectors and confusion-matrix axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column codes of the lesion taxonomy, in canonical order.
pub const LESION_CODES: [&str; 7] = ["MEL", "NV", "BCC", "AKIEC", "BKL", "DF", "VASC"];

pub const LESION_NAMES: [&str; 7] = [
    "Melanoma",
    "Melanocytic nevus",
    "Basal cell carcinoma",
    "Actinic keratosis",
    "Benign keratosis",
    "Dermatofibroma",
    "Vascular",
];

/// Ordered set of class codes. The position of a code is its class index everywhere.
///
/// The seven-class lesion taxonomy is the default. Other label spaces are allowed
/// (the synthetic desk dataset has three classes) as long as they have at least
/// two unique, non-empty codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    codes: Vec<String>,
    names: Vec<String>,
}

impl Default for LabelSpace {
    fn default() -> Self {
        Self::lesions()
    }
}

impl LabelSpace {
    pub fn lesions() -> Self {
        Self {
            codes: LESION_CODES.iter().map(|s| s.to_string()).collect(),
            names: LESION_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Builds a custom label space. Display names default to the codes.
    pub fn new<S: AsRef<str>>(codes: &[S]) -> Result<Self> {
        let codes: Vec<String> = codes.iter().map(|c| c.as_ref().to_string()).collect();
        if codes.len() < 2 {
            return Err(Error::Contract(format!(
                "a label space needs at least 2 classes, got {}",
                codes.len()
            )));
        }
        for (i, code) in codes.iter().enumerate() {
            if code.is_empty() || code == "image" || code.contains(',') {
                return Err(Error::Contract(format!("invalid class code `{code}`")));
            }
            if codes[..i].contains(code) {
                return Err(Error::Contract(format!("duplicate class code `{code}`")));
            }
        }
        if codes.iter().map(String::as_str).eq(LESION_CODES) {
            return Ok(Self::lesions());
        }
        Ok(Self {
            names: codes.clone(),
            codes,
        })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[String] {
        &self.codes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn code(&self, class: usize) -> &str {
        &self.codes[class]
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.codes.iter().position(|c| c == code)
    }

    /// `image,<code>,<code>,...`, the header of both ground-truth and prediction CSVs.
    pub fn csv_header(&self) -> String {
        let mut header = String::from("image");
        for code in &self.codes {
            header.push(',');
            header.push_str(code);
        }
        header
    }

    /// Checks a parsed header row against this label space.
    pub fn check_header<S: AsRef<str>>(&self, fields: &[S]) -> Result<()> {
        let expected = std::iter::once("image").chain(self.codes.iter().map(String::as_str));
        for (pos, want) in expected.enumerate() {
            match fields.get(pos).map(|f| f.as_ref().trim()) {
                Some(got) if got == want => {}
                Some(got) => {
                    return Err(Error::Format(format!(
                        "header column {} is `{got}`, expected `{want}` (header must be `{}`)",
                        pos + 1,
                        self.csv_header()
                    )))
                }
                None => {
                    return Err(Error::Format(format!(
                        "header is missing column {} `{want}` (header must be `{}`)",
                        pos + 1,
                        self.csv_header()
                    )))
                }
            }
        }
        if let Some(extra) = fields.get(self.codes.len() + 1) {
            return Err(Error::Format(format!(
                "unexpected header column {} `{}`",
                self.codes.len() + 2,
                extra.as_ref()
            )));
        }
        Ok(())
    }
}
