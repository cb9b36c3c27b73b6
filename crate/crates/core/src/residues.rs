//! Tables for the 20 canonical amino acids.
//!
//! Index order is the alphabetical one-letter alphabet `ACDEFGHIKLMNPQRSTVWY`;
//! every one-hot encoding in the crate uses this order.

/// One-letter codes in canonical (alphabetical) order.
pub const ALPHABET: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

/// Number of canonical residue types.
pub const NUM_RESIDUES: usize = 20;

const THREE_LETTER: [&str; 20] = [
    "ALA", "CYS", "ASP", "GLU", "PHE", "GLY", "HIS", "ILE", "LYS", "LEU", "MET", "ASN", "PRO",
    "GLN", "ARG", "SER", "THR", "VAL", "TRP", "TYR",
];

/// Kyte–Doolittle hydropathy.
const HYDROPATHY: [f64; 20] = [
    1.8, 2.5, -3.5, -3.5, 2.8, -0.4, -3.2, 4.5, -3.9, 3.8, 1.9, -3.5, -1.6, -3.5, -4.5, -0.8,
    -0.7, 4.2, -0.9, -1.3,
];

/// Net side-chain charge at physiological pH (His gets the conventional +0.1).
const CHARGE: [f64; 20] = [
    0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.1, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
    0.0, 0.0,
];

/// 1.0 for polar side chains (charged residues included), 0.0 otherwise.
const POLAR: [f64; 20] = [
    0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0,
    0.0, 1.0,
];

/// Free amino-acid molecular weight in Da.
const MOL_WEIGHT: [f64; 20] = [
    89.09, 121.16, 133.10, 147.13, 165.19, 75.07, 155.16, 131.17, 146.19, 131.17, 149.21, 132.12,
    115.13, 146.15, 174.20, 105.09, 119.12, 117.15, 204.23, 181.19,
];

/// 1.0 for aromatic side chains (F, W, Y).
const AROMATIC: [f64; 20] = [
    0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    1.0, 1.0,
];

/// Number of side-chain chi angles, capped at 4.
const CHI_COUNT: [usize; 20] = [0, 1, 2, 3, 2, 0, 2, 2, 4, 2, 3, 2, 2, 3, 4, 1, 1, 1, 2, 2];

/// Index of a one-letter residue code in [`ALPHABET`], case sensitive.
pub fn index_of(code: u8) -> Option<usize> {
    ALPHABET.iter().position(|&c| c == code)
}

/// One-letter code for an alphabet index. Panics if `idx >= 20`.
pub fn code_of(idx: usize) -> u8 {
    ALPHABET[idx]
}

/// Three-letter PDB residue name for an alphabet index.
pub fn three_letter(idx: usize) -> &'static str {
    THREE_LETTER[idx]
}

/// Alphabet index for a three-letter PDB residue name (uppercase).
pub fn index_of_three_letter(name: &str) -> Option<usize> {
    THREE_LETTER.iter().position(|&c| c == name)
}

/// The five physicochemical scalars used both as node features and in the
/// built-in sequence featurizer: hydropathy, charge, polarity flag,
/// molecular weight / 100, aromaticity flag.
pub fn physchem(idx: usize) -> [f64; 5] {
    [
        HYDROPATHY[idx],
        CHARGE[idx],
        POLAR[idx],
        MOL_WEIGHT[idx] / 100.0,
        AROMATIC[idx],
    ]
}

/// Number of side-chain chi angles defined for this residue type.
pub fn chi_count(idx: usize) -> usize {
    CHI_COUNT[idx]
}

/// 20-dim one-hot of a residue index followed by the 5 physicochemical
/// scalars; the node feature `h_i` of the amino-acid level graph.
pub fn node_feature(idx: usize) -> Vec<f64> {
    let mut h = vec![0.0; NUM_RESIDUES + 5];
    h[idx] = 1.0;
    h[NUM_RESIDUES..].copy_from_slice(&physchem(idx));
    h
}

/// Validates that a sequence only uses the canonical alphabet; returns the
/// index of the first offending byte otherwise.
pub fn validate_sequence(seq: &str) -> Result<Vec<usize>, (usize, char)> {
    seq.bytes()
        .enumerate()
        .map(|(pos, b)| index_of(b).ok_or((pos, b as char)))
        .collect()
}
