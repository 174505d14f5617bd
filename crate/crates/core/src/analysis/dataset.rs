use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{extract_features, FeatureVector, InteractionEvent};

/// Ground-truth class; serialized as `1` (human) or `-1` (bot).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Human,
    Bot,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Human => 1.0,
            Label::Bot => -1.0,
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Label::Human),
            -1 => Ok(Label::Bot),
            _ => Err(format!("label {v} is neither 1 nor -1")),
        }
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Human => 1,
            Label::Bot => -1,
        }
    }
}

/// One line of a labeled dataset file. Either `features` or `events` (or
/// both) is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSession {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<InteractionEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_s: Option<f64>,
    pub label: Label,
}

impl LabeledSession {
    /// Stored features, or features extracted from the events.
    pub fn features(&self) -> Option<FeatureVector> {
        self.features
            .or_else(|| extract_features(&self.events).ok())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {0}: row has neither features nor events")]
    Empty(usize),
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<LabeledSession>, DatasetError> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: LabeledSession =
            serde_json::from_str(&line).map_err(|source| DatasetError::Parse {
                line: i + 1,
                source,
            })?;
        if row.features.is_none() && row.events.is_empty() {
            return Err(DatasetError::Empty(i + 1));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_dataset(mut writer: impl Write, rows: &[LabeledSession]) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut writer, row)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::EventKind;

    #[test]
    fn jsonl_roundtrip() {
        let rows = vec![
            LabeledSession {
                features: Some(FeatureVector {
                    avg_time_interval: 0.5,
                    std_time_interval: 0.1,
                    total_movement: 120.0,
                    num_clicks: 3,
                }),
                events: vec![],
                elapsed_s: None,
                label: Label::Human,
            },
            LabeledSession {
                features: None,
                events: vec![
                    InteractionEvent::at(EventKind::Click, 0.1),
                    InteractionEvent::at(EventKind::Submit, 0.3),
                ],
                elapsed_s: Some(0.3),
                label: Label::Bot,
            },
        ];
        let mut buf = Vec::new();
        write_dataset(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 2);
        assert_eq!(read_dataset(&buf[..]).unwrap(), rows);
        assert_eq!(rows[1].features().unwrap().num_clicks, 1);
    }

    #[test]
    fn bad_rows() {
        assert!(matches!(
            read_dataset(&b"{\"label\":1}\n"[..]),
            Err(DatasetError::Empty(1))
        ));
        assert!(matches!(
            read_dataset(&b"\n{\"label\":0,\"events\":[]}\n"[..]),
            Err(DatasetError::Parse { line: 2, .. })
        ));
    }
}
