//! Minimal fixed-column PDB subset: ATOM records, N/CA/C atoms, first model,
//! first chain — plus the inverse exporter for external viewers.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{BackboneAtoms, ConditionLabel, DataError, ProteinRecord};
use crate::residues;

/// Parse result: the chain that was read plus how many residues were dropped
/// for missing backbone atoms or non-canonical residue names.
#[derive(Debug, Clone)]
pub struct PdbParse {
    pub records: Vec<ProteinRecord>,
    pub dropped_residues: usize,
}

fn slice_field(line: &str, lo: usize, hi: usize) -> &str {
    let bytes = line.as_bytes();
    let hi = hi.min(bytes.len());
    if lo >= hi {
        return "";
    }
    std::str::from_utf8(&bytes[lo..hi]).unwrap_or("").trim()
}

fn parse_coord(line: &str, lo: usize, hi: usize, lineno: usize, what: &str) -> Result<f64, DataError> {
    let raw = slice_field(line, lo, hi);
    raw.parse::<f64>().map_err(|_| DataError::MalformedAtomLine {
        line: lineno,
        reason: format!("bad {what} field '{raw}'"),
    })
}

/// Parses ATOM records of the first chain of the first model. Non-ATOM lines
/// are ignored; residues missing any of N/CA/C (or with a non-canonical
/// residue name) are dropped and counted.
///
/// Fixed columns (1-based): atom name 13–16, residue name 18–20, chain 22,
/// residue number 23–26, x/y/z 31–38 / 39–46 / 47–54.
pub fn parse_pdb_backbone(text: &str) -> Result<PdbParse, DataError> {
    let mut chain_id: Option<char> = None;
    let mut header_id: Option<String> = None;
    // Keyed by residue sequence number, in file order.
    let mut residues_seen: Vec<i64> = Vec::new();
    let mut atoms: BTreeMap<i64, (Option<[f64; 3]>, Option<[f64; 3]>, Option<[f64; 3]>, String)> =
        BTreeMap::new();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with("HEADER") {
            let id = slice_field(line, 62, 66);
            if !id.is_empty() {
                header_id = Some(id.to_string());
            }
            continue;
        }
        if line.starts_with("ENDMDL") {
            break; // first model only
        }
        if !line.starts_with("ATOM") {
            continue;
        }
        let chain = line.as_bytes().get(21).copied().unwrap_or(b' ') as char;
        match chain_id {
            None => chain_id = Some(chain),
            Some(c) if c != chain => continue, // first chain only
            _ => {}
        }
        let atom_name = slice_field(line, 12, 16);
        if !matches!(atom_name, "N" | "CA" | "C") {
            continue;
        }
        let res_name = slice_field(line, 17, 20).to_string();
        let res_seq: i64 = slice_field(line, 22, 26).parse().map_err(|_| {
            DataError::MalformedAtomLine { line: lineno, reason: "bad residue number".into() }
        })?;
        let x = parse_coord(line, 30, 38, lineno, "x")?;
        let y = parse_coord(line, 38, 46, lineno, "y")?;
        let z = parse_coord(line, 46, 54, lineno, "z")?;

        let entry = atoms.entry(res_seq).or_insert_with(|| {
            residues_seen.push(res_seq);
            (None, None, None, res_name.clone())
        });
        match atom_name {
            "N" => entry.0 = Some([x, y, z]),
            "CA" => entry.1 = Some([x, y, z]),
            "C" => entry.2 = Some([x, y, z]),
            _ => unreachable!(),
        }
    }

    let mut sequence = String::new();
    let mut ca_coords = Vec::new();
    let mut backbone = Vec::new();
    let mut dropped = 0usize;
    for res_seq in &residues_seen {
        let (n, ca, c, name) = &atoms[res_seq];
        match (n, ca, c, residues::index_of_three_letter(name)) {
            (Some(n), Some(ca), Some(c), Some(idx)) => {
                sequence.push(residues::code_of(idx) as char);
                ca_coords.push(*ca);
                backbone.push(BackboneAtoms { n: *n, ca: *ca, c: *c });
            }
            _ => dropped += 1,
        }
    }

    let records = if sequence.is_empty() {
        Vec::new()
    } else {
        vec![ProteinRecord {
            id: header_id.unwrap_or_else(|| "pdb".to_string()),
            sequence,
            ca_coords,
            backbone_coords: Some(backbone),
            torsions: None,
            labels: ConditionLabel::Class(1),
        }]
    };
    Ok(PdbParse { records, dropped_residues: dropped })
}

fn write_atom(
    out: &mut String,
    serial: usize,
    atom: &str,
    res_name: &str,
    res_seq: usize,
    pos: &[f64; 3],
    element: &str,
) {
    // Atom names shorter than 4 chars start in column 14; altLoc (17) and
    // iCode (27) stay blank.
    let name_field = format!(" {atom:<3}");
    let _ = writeln!(
        out,
        "ATOM  {serial:>5} {name_field} {res_name:>3} A{res_seq:>4}    {:>8.3}{:>8.3}{:>8.3}  1.00  0.00          {element:>2}",
        pos[0], pos[1], pos[2]
    );
}

/// Writes a record as minimal PDB ATOM lines (the parser's inverse). Full
/// backbone when present, otherwise a Cα-only trace.
pub fn export_pdb(record: &ProteinRecord) -> String {
    let mut out = String::new();
    let mut serial = 1;
    let indices = record.residue_indices();
    for (i, &res_idx) in indices.iter().enumerate() {
        let res_name = residues::three_letter(res_idx);
        let res_seq = i + 1;
        if let Some(bb) = &record.backbone_coords {
            write_atom(&mut out, serial, "N", res_name, res_seq, &bb[i].n, "N");
            write_atom(&mut out, serial + 1, "CA", res_name, res_seq, &bb[i].ca, "C");
            write_atom(&mut out, serial + 2, "C", res_name, res_seq, &bb[i].c, "C");
            serial += 3;
        } else {
            write_atom(&mut out, serial, "CA", res_name, res_seq, &record.ca_coords[i], "C");
            serial += 1;
        }
    }
    out.push_str("TER\nEND\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
ATOM      1  N   ALA A   1      10.000   5.000  -6.000  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.104   6.134  -6.504  1.00  0.00           C
ATOM      3  C   ALA A   1      12.000   6.500  -5.300  1.00  0.00           C
ATOM      4  N   GLY A   2      12.500   7.600  -5.200  1.00  0.00           N
ATOM      5  CA  GLY A   2      13.400   8.100  -4.200  1.00  0.00           C
ATOM      6  C   GLY A   2      14.500   8.900  -4.800  1.00  0.00           C
TER
END
";

    #[test]
    fn fixture_parses_to_exact_coordinates() {
        let parse = parse_pdb_backbone(FIXTURE).unwrap();
        assert_eq!(parse.records.len(), 1);
        assert_eq!(parse.dropped_residues, 0);
        let rec = &parse.records[0];
        assert_eq!(rec.sequence, "AG");
        assert_eq!(rec.ca_coords[0], [11.104, 6.134, -6.504]);
        assert_eq!(rec.backbone_coords.as_ref().unwrap()[1].c, [14.5, 8.9, -4.8]);
    }

    #[test]
    fn empty_input_gives_no_records() {
        let parse = parse_pdb_backbone("").unwrap();
        assert!(parse.records.is_empty());
        assert_eq!(parse.dropped_residues, 0);
    }

    #[test]
    fn bad_float_field_names_the_line() {
        let bad = "ATOM      2  CA  ALA A   1      xx.104   6.134  -6.504  1.00  0.00           C\n";
        match parse_pdb_backbone(bad) {
            Err(DataError::MalformedAtomLine { line: 1, reason }) => {
                assert!(reason.contains('x'), "{reason}");
            }
            other => panic!("expected MalformedAtomLine, got {other:?}"),
        }
    }

    #[test]
    fn incomplete_and_unknown_residues_are_dropped_with_count() {
        let text = "\
ATOM      1  N   ALA A   1      10.000   5.000  -6.000  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.000   6.000  -6.000  1.00  0.00           C
ATOM      3  CA  GLY A   2      13.000   8.000  -4.000  1.00  0.00           C
ATOM      4  N   UNK A   3      14.000   8.000  -4.000  1.00  0.00           N
ATOM      5  CA  UNK A   3      15.000   8.000  -4.000  1.00  0.00           C
ATOM      6  C   UNK A   3      16.000   8.000  -4.000  1.00  0.00           C
";
        let parse = parse_pdb_backbone(text).unwrap();
        // ALA misses C, GLY misses N and C, UNK is non-canonical.
        assert_eq!(parse.dropped_residues, 3);
        assert!(parse.records.is_empty());
    }

    #[test]
    fn only_first_chain_and_model_are_read() {
        let text = "\
ATOM      1  N   ALA A   1      10.000   5.000  -6.000  1.00  0.00           N
ATOM      2  CA  ALA A   1      11.000   6.000  -6.000  1.00  0.00           C
ATOM      3  C   ALA A   1      12.000   6.000  -5.000  1.00  0.00           C
ATOM      4  N   GLY B   1      20.000   5.000  -6.000  1.00  0.00           N
ATOM      5  CA  GLY B   1      21.000   6.000  -6.000  1.00  0.00           C
ATOM      6  C   GLY B   1      22.000   6.000  -5.000  1.00  0.00           C
ENDMDL
ATOM      7  N   TRP A   9      30.000   5.000  -6.000  1.00  0.00           N
";
        let parse = parse_pdb_backbone(text).unwrap();
        assert_eq!(parse.records.len(), 1);
        assert_eq!(parse.records[0].sequence, "A");
    }

    #[test]
    fn export_then_parse_round_trips_at_pdb_precision() {
        let rec = ProteinRecord {
            id: "test".into(),
            sequence: "AGW".into(),
            ca_coords: vec![[1.125, -2.25, 3.0], [4.5, 5.0, -6.125], [0.0, 1.0, 2.0]],
            backbone_coords: Some(vec![
                BackboneAtoms { n: [0.5, -2.0, 3.0], ca: [1.125, -2.25, 3.0], c: [2.0, -2.5, 3.25] },
                BackboneAtoms { n: [4.0, 4.5, -6.0], ca: [4.5, 5.0, -6.125], c: [5.0, 5.5, -6.25] },
                BackboneAtoms { n: [-0.5, 0.5, 2.0], ca: [0.0, 1.0, 2.0], c: [0.5, 1.5, 2.0] },
            ]),
            torsions: None,
            labels: ConditionLabel::Class(1),
        };
        let text = export_pdb(&rec);
        let parsed = parse_pdb_backbone(&text).unwrap();
        assert_eq!(parsed.records[0].sequence, "AGW");
        assert_eq!(parsed.records[0].ca_coords, rec.ca_coords);
        assert_eq!(parsed.records[0].backbone_coords, rec.backbone_coords);
    }

    #[test]
    fn ca_only_export_parses_as_dropped_residues() {
        let rec = ProteinRecord {
            id: "trace".into(),
            sequence: "AG".into(),
            ca_coords: vec![[0.0, 0.0, 0.0], [3.8, 0.0, 0.0]],
            backbone_coords: None,
            torsions: None,
            labels: ConditionLabel::Class(1),
        };
        let text = export_pdb(&rec);
        // CA-only residues lack N and C: parser counts them as dropped.
        let parsed = parse_pdb_backbone(&text).unwrap();
        assert_eq!(parsed.dropped_residues, 2);
        assert!(text.lines().filter(|l| l.starts_with("ATOM")).count() == 2);
    }
}
