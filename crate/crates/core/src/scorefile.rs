//! Score files: UTF-8 lines of `utterance_id<TAB>score`.
//!
//! Scores are written with Rust's shortest round-trip float formatting, so
//! write → parse reproduces every value bit-for-bit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScoreFileError {
    #[error("line {line}: expected `id<TAB>score`")]
    MissingTab { line: usize },
    #[error("line {line}: empty utterance id")]
    EmptyId { line: usize },
    #[error("line {line}: unparsable score `{token}`")]
    BadScore { line: usize, token: String },
    #[error("line {line}: score for `{id}` is not finite")]
    NonFinite { line: usize, id: String },
    #[error("duplicate utterance id `{id}`")]
    DuplicateId { id: String },
}

pub fn render_scores(rows: &[(String, f64)]) -> String {
    let mut out = String::new();
    for (id, score) in rows {
        out.push_str(&format!("{id}\t{score}\n"));
    }
    out
}

pub fn parse_scores(text: &str) -> Result<Vec<(String, f64)>, ScoreFileError> {
    let mut rows: Vec<(String, f64)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let (id, token) = raw
            .split_once('\t')
            .ok_or(ScoreFileError::MissingTab { line })?;
        if id.is_empty() {
            return Err(ScoreFileError::EmptyId { line });
        }
        let score: f64 = token
            .parse()
            .map_err(|_| ScoreFileError::BadScore { line, token: token.to_string() })?;
        if !score.is_finite() {
            return Err(ScoreFileError::NonFinite { line, id: id.to_string() });
        }
        if rows.iter().any(|(seen, _)| seen == id) {
            return Err(ScoreFileError::DuplicateId { id: id.to_string() });
        }
        rows.push((id.to_string(), score));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![
            ("LA_0001".to_string(), 0.1 + 0.2),
            ("LA_0002".to_string(), -3.725290298461914e-9),
            ("LA_0003".to_string(), 12345.678901234567),
            ("LA_0004".to_string(), 0.0),
        ];
        let text = render_scores(&rows);
        let back = parse_scores(&text).unwrap();
        assert_eq!(rows.len(), back.len());
        for ((ia, sa), (ib, sb)) in rows.iter().zip(&back) {
            assert_eq!(ia, ib);
            assert_eq!(sa.to_bits(), sb.to_bits());
        }
    }

    #[test]
    fn duplicate_id_error_names_the_id() {
        let err = parse_scores("a\t1\nb\t2\na\t3\n").unwrap_err();
        match err {
            ScoreFileError::DuplicateId { id } => assert_eq!(id, "a"),
            other => panic!("want DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn negative_zero_parses_equal_to_zero() {
        let rows = parse_scores("x\t-0\n").unwrap();
        assert_eq!(rows[0].1, 0.0);
        assert!(rows[0].1.is_sign_negative());
    }

    #[test]
    fn malformed_lines_are_structured_errors() {
        assert!(matches!(
            parse_scores("nutab"),
            Err(ScoreFileError::MissingTab { line: 1 })
        ));
        assert!(matches!(
            parse_scores("a\t1\n\tb"),
            Err(ScoreFileError::EmptyId { line: 2 })
        ));
        assert!(matches!(
            parse_scores("a\tpotato"),
            Err(ScoreFileError::BadScore { line: 1, .. })
        ));
        assert!(matches!(
            parse_scores("a\tNaN"),
            Err(ScoreFileError::NonFinite { line: 1, .. })
        ));
        assert!(matches!(
            parse_scores("a\tinf"),
            Err(ScoreFileError::NonFinite { line: 1, .. })
        ));
    }

    #[test]
    fn blank_lines_are_ignored() {
        let rows = parse_scores("a\t1\n\nb\t2\n").unwrap();
        assert_eq!(rows.len(), 2);
    }
}
