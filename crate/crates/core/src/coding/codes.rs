//! Codes CSV: `turn_index,category[,rater][,speaker][,role]`.

use std::io;

use thiserror::Error;

use super::{CodedTurn, IpaCategory, Rater};

#[derive(Debug, Error)]
pub enum CodesError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: {reason}")]
    BadRow { row: usize, reason: String },
}

/// Reads codes. Rows without a rater column use `default_rater`.
pub fn read_codes<R: io::Read>(
    reader: R,
    default_rater: &Rater,
) -> Result<Vec<CodedTurn>, CodesError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let idx = col("turn_index").ok_or(CodesError::MissingColumn("turn_index"))?;
    let cat = col("category").ok_or(CodesError::MissingColumn("category"))?;
    let (rater, speaker, role) = (col("rater"), col("speaker"), col("role"));

    let mut out = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let bad = |reason: String| CodesError::BadRow {
            row: row + 1,
            reason,
        };
        let field = |i: Option<usize>| i.and_then(|i| record.get(i)).filter(|s| !s.is_empty());
        let turn_index = record[idx]
            .parse::<usize>()
            .map_err(|e| bad(format!("turn_index: {e}")))?;
        let category = record[cat]
            .parse::<u8>()
            .ok()
            .and_then(IpaCategory::new)
            .ok_or_else(|| bad(format!("category `{}` is not 1..=13", &record[cat])))?;
        let rater = match field(rater) {
            Some(r) => r.parse().map_err(bad)?,
            None => default_rater.clone(),
        };
        let mut coded = CodedTurn::new(turn_index, category, rater);
        coded.speaker = field(speaker).map(str::to_string);
        coded.role = field(role).map(str::to_string);
        out.push(coded);
    }
    Ok(out)
}

pub fn write_codes<W: io::Write>(writer: W, codes: &[CodedTurn]) -> Result<(), CodesError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["turn_index", "category", "rater", "speaker", "role"])?;
    for c in codes {
        wtr.write_record([
            c.turn_index.to_string(),
            c.category.code().to_string(),
            c.rater.to_string(),
            c.speaker.clone().unwrap_or_default(),
            c.role.clone().unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let codes = vec![
            CodedTurn::new(0, IpaCategory::new(6).unwrap(), Rater::Llm).with_role("Peter", "CEO"),
            CodedTurn::new(1, IpaCategory::new(13).unwrap(), Rater::Human("a".into())),
        ];
        let mut buf = Vec::new();
        write_codes(&mut buf, &codes).unwrap();
        let back = read_codes(buf.as_slice(), &Rater::Llm).unwrap();
        assert_eq!(back, codes);
    }

    #[test]
    fn minimal_columns() {
        let back = read_codes(
            "turn_index,category\n0,4\n1, 7\n".as_bytes(),
            &Rater::Human("x".into()),
        )
        .unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].category.code(), 7);
        assert_eq!(back[0].rater, Rater::Human("x".into()));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            read_codes("turn_index,category\n0,14\n".as_bytes(), &Rater::Llm),
            Err(CodesError::BadRow { row: 1, .. })
        ));
        assert!(matches!(
            read_codes("index,category\n".as_bytes(), &Rater::Llm),
            Err(CodesError::MissingColumn("turn_index"))
        ));
    }
}
