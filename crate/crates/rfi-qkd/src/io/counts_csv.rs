//! The counts CSV: one row per integration interval holding the 24
//! coincidence counters (Alice outcome major) and the 10 singles counters,
//! preceded by the interval bookkeeping. Flat, integer-valued,
//! diff-friendly, byte-identical across reruns of the same seed.

use std::fmt::Write as _;
use std::path::Path;

use crate::detection::{CountRecord, Side, ALICE_OUTCOMES, BOB_OUTCOMES};
use crate::io::DataError;

/// The exact header line of a counts CSV.
pub const COUNTS_HEADER: &str = "t_start_s,duration_s,slot_ns,\
AZp_BZp,AZp_BZm,AZp_BXp,AZp_BXm,\
AZm_BZp,AZm_BZm,AZm_BXp,AZm_BXm,\
AXp_BZp,AXp_BZm,AXp_BXp,AXp_BXm,\
AXm_BZp,AXm_BZm,AXm_BXp,AXm_BXm,\
AYp_BZp,AYp_BZm,AYp_BXp,AYp_BXm,\
AYm_BZp,AYm_BZm,AYm_BXp,AYm_BXm,\
SA_Zp,SA_Zm,SA_Xp,SA_Xm,SA_Yp,SA_Ym,\
SB_Zp,SB_Zm,SB_Xp,SB_Xm";

const N_FIELDS: usize = 3 + 24 + 6 + 4;

pub fn counts_to_csv(records: &[CountRecord]) -> String {
    let mut out = String::new();
    out.push_str(COUNTS_HEADER);
    out.push('\n');
    for rec in records {
        let _ = write!(
            out,
            "{},{},{}",
            rec.t_start,
            rec.duration,
            rec.slot_duration * 1e9
        );
        for row in &rec.coincidences {
            for &count in row {
                let _ = write!(out, ",{count}");
            }
        }
        for &count in &rec.singles_alice {
            let _ = write!(out, ",{count}");
        }
        for &count in &rec.singles_bob {
            let _ = write!(out, ",{count}");
        }
        out.push('\n');
    }
    out
}

pub fn write_counts_csv(path: &Path, records: &[CountRecord]) -> Result<(), DataError> {
    std::fs::write(path, counts_to_csv(records))
        .map_err(|e| DataError(format!("cannot write {}: {e}", path.display())))
}

/// Parse a counts CSV; schema violations are reported with their 1-based
/// row number.
pub fn parse_counts_csv(text: &str) -> Result<Vec<CountRecord>, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError("empty counts CSV".into()))?;
    if header.trim_end() != COUNTS_HEADER {
        return Err(DataError(format!(
            "row 1: header does not match the counts schema (expected `{}...`)",
            &COUNTS_HEADER[..40]
        )));
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != N_FIELDS {
            return Err(DataError(format!(
                "row {row}: expected {N_FIELDS} fields, found {}",
                fields.len()
            )));
        }
        let float = |k: usize, name: &str| -> Result<f64, DataError> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| DataError(format!("row {row}: {name} `{}` is not a number", fields[k])))
        };
        let t_start = float(0, "t_start_s")?;
        let duration = float(1, "duration_s")?;
        let slot_ns = float(2, "slot_ns")?;
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(DataError(format!(
                "row {row}: duration_s must be positive, got {duration}"
            )));
        }
        if !(slot_ns > 0.0) || !slot_ns.is_finite() {
            return Err(DataError(format!(
                "row {row}: slot_ns must be positive, got {slot_ns}"
            )));
        }
        if !t_start.is_finite() {
            return Err(DataError(format!("row {row}: t_start_s must be finite")));
        }
        let count = |k: usize| -> Result<u64, DataError> {
            fields[k].parse::<u64>().map_err(|_| {
                DataError(format!(
                    "row {row}: count field {} `{}` is not a nonnegative integer",
                    k + 1,
                    fields[k]
                ))
            })
        };
        let mut coincidences = [[0u64; 4]; 6];
        for i in 0..6 {
            for j in 0..4 {
                coincidences[i][j] = count(3 + i * 4 + j)?;
            }
        }
        let mut singles_alice = [0u64; 6];
        for (i, single) in singles_alice.iter_mut().enumerate() {
            *single = count(27 + i)?;
        }
        let mut singles_bob = [0u64; 4];
        for (j, single) in singles_bob.iter_mut().enumerate() {
            *single = count(33 + j)?;
        }
        records.push(CountRecord {
            t_start,
            duration,
            slot_duration: slot_ns * 1e-9,
            coincidences,
            singles_alice,
            singles_bob,
        });
    }
    if records.is_empty() {
        return Err(DataError("counts CSV has a header but no rows".into()));
    }
    Ok(records)
}

pub fn read_counts_csv(path: &Path) -> Result<Vec<CountRecord>, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DataError(format!("cannot read {}: {e}", path.display())))?;
    parse_counts_csv(&text).map_err(|e| DataError(format!("{}: {}", path.display(), e.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<CountRecord> {
        let mut r1 = CountRecord {
            t_start: 0.0,
            duration: 1.0,
            slot_duration: 1e-9,
            coincidences: [[0; 4]; 6],
            singles_alice: [11, 12, 13, 14, 15, 16],
            singles_bob: [21, 22, 23, 24],
        };
        for i in 0..6 {
            for j in 0..4 {
                r1.coincidences[i][j] = (100 * i + 10 * j) as u64;
            }
        }
        let r2 = CountRecord { t_start: 1.0, ..r1.clone() };
        vec![r1, r2]
    }

    #[test]
    fn header_has_37_columns() {
        assert_eq!(COUNTS_HEADER.split(',').count(), N_FIELDS);
    }

    #[test]
    fn round_trip_is_identical() {
        let records = sample_records();
        let csv = counts_to_csv(&records);
        let back = parse_counts_csv(&csv).unwrap();
        assert_eq!(back, records);
        // and the re-serialization is byte-identical
        assert_eq!(counts_to_csv(&back), csv);
    }

    #[test]
    fn violations_carry_row_numbers() {
        let records = sample_records();
        let csv = counts_to_csv(&records);
        let mut lines: Vec<String> = csv.lines().map(String::from).collect();

        let mut truncated = lines.clone();
        truncated[2] = truncated[2].rsplit_once(',').unwrap().0.to_string();
        let err = parse_counts_csv(&truncated.join("\n")).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");

        lines[1] = lines[1].replacen("1,", "x,", 1);
        let err = parse_counts_csv(&lines.join("\n")).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");

        let err = parse_counts_csv("bad,header\n1,2,3").unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn negative_counts_rejected() {
        let records = sample_records();
        let csv = counts_to_csv(&records).replace(",11,", ",-11,");
        assert!(parse_counts_csv(&csv).is_err());
    }

    #[test]
    fn header_order_matches_outcome_constants() {
        // the column order is the canonical outcome order
        let mut expect = String::from("t_start_s,duration_s,slot_ns");
        for &(ab, asn) in &ALICE_OUTCOMES {
            for &(bb, bsn) in &BOB_OUTCOMES {
                expect.push_str(&format!(
                    ",A{}{}_B{}{}",
                    ab.letter(),
                    asn.letter(),
                    bb.letter(),
                    bsn.letter()
                ));
            }
        }
        for &(b, s) in &ALICE_OUTCOMES {
            expect.push_str(&format!(",S{}_{}{}", 'A', b.letter(), s.letter()));
        }
        for &(b, s) in &BOB_OUTCOMES {
            expect.push_str(&format!(",S{}_{}{}", 'B', b.letter(), s.letter()));
        }
        let _ = Side::Alice;
        assert_eq!(COUNTS_HEADER, expect);
    }
}
