//! Structure lattice over modalities and the block layout of the global
//! loading matrix, including the structural zero mask.
//!
//! A *structure* is a nonempty subset of the modalities `{1..M}`; each
//! structure carries a latent dimension `r_s` (possibly 0). The global loading
//! matrix is `d x r` with `d = sum(d_m)` and `r = sum(r_s)`; the block of rows
//! for modality `m` and columns for structure `s` is structurally zero
//! whenever `m` is not a member of `s`.

use crate::error::{CoreError, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// A nonempty subset of modalities, stored sorted ascending, 1-indexed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Structure(Vec<usize>);

impl Structure {
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(CoreError::EmptyStructure);
        }
        members.sort_unstable();
        members.dedup();
        Ok(Structure(members))
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, modality: usize) -> bool {
        self.0.binary_search(&modality).is_ok()
    }

    pub fn cardinality(&self) -> usize {
        self.0.len()
    }

    /// Lowest-index member modality (the anchor for frame alignment).
    pub fn anchor(&self) -> usize {
        self.0[0]
    }
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (i, m) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
        }
        write!(f, "}}")
    }
}

/// All 2^M - 1 nonempty subsets of `{1..M}` in canonical order: decreasing
/// cardinality, lexicographic within each cardinality.
pub fn canonical_structures(m: usize) -> Vec<Structure> {
    let mut out = Vec::with_capacity((1usize << m) - 1);
    for card in (1..=m).rev() {
        let mut combo: Vec<usize> = (1..=card).collect();
        loop {
            out.push(Structure(combo.clone()));
            // next lexicographic combination of size `card` from {1..m}
            let mut i = card;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if combo[i] < m - (card - 1 - i) {
                    combo[i] += 1;
                    for j in i + 1..card {
                        combo[j] = combo[j - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    combo.clear();
                    break;
                }
            }
            if combo.is_empty() {
                break;
            }
        }
    }
    out
}

/// Per-structure latent dimensions, either uniform or explicit in canonical
/// structure order.
#[derive(Debug, Clone)]
pub enum RankSpec {
    Uniform(usize),
    PerStructure(Vec<usize>),
}

/// Modalities, ambient dimensions, and the ordered structure lattice with
/// per-structure latent dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    modalities: usize,
    ambient_dims: Vec<usize>,
    structures: Vec<Structure>,
    latent_dims: Vec<usize>,
}

impl HierarchySpec {
    /// Builds the full lattice of all 2^M - 1 nonempty subsets in canonical
    /// order. Structures with `r_s = 0` are retained with empty column ranges.
    pub fn full_lattice(ambient_dims: &[usize], ranks: RankSpec) -> Result<Self> {
        let m = ambient_dims.len();
        let structures = canonical_structures(m);
        let latent_dims = match ranks {
            RankSpec::Uniform(r) => vec![r; structures.len()],
            RankSpec::PerStructure(v) => {
                if v.len() != structures.len() {
                    return Err(CoreError::RankListLength {
                        got: v.len(),
                        expected: structures.len(),
                    });
                }
                v
            }
        };
        Self::validate(m, ambient_dims.to_vec(), structures, latent_dims)
    }

    /// Builds a lattice from an explicit structure subset. The full canonical
    /// lattice is retained; structures not listed get latent dimension 0.
    pub fn with_structures(ambient_dims: &[usize], given: &[(Structure, usize)]) -> Result<Self> {
        let m = ambient_dims.len();
        let canon = canonical_structures(m);
        let mut latent_dims = vec![0usize; canon.len()];
        let mut seen: Vec<&Structure> = Vec::new();
        for (s, r) in given {
            if seen.contains(&s) {
                return Err(CoreError::DuplicateStructure(s.members().to_vec()));
            }
            seen.push(s);
            for &mm in s.members() {
                if mm == 0 || mm > m {
                    return Err(CoreError::InvalidMember {
                        structure: s.members().to_vec(),
                        modality: mm,
                        m,
                    });
                }
            }
            let idx = canon
                .iter()
                .position(|c| c == s)
                .expect("membership validated above");
            latent_dims[idx] = *r;
        }
        Self::validate(m, ambient_dims.to_vec(), canon, latent_dims)
    }

    fn validate(
        m: usize,
        ambient_dims: Vec<usize>,
        structures: Vec<Structure>,
        latent_dims: Vec<usize>,
    ) -> Result<Self> {
        if m < 2 {
            return Err(CoreError::TooFewModalities(m));
        }
        for (i, &d) in ambient_dims.iter().enumerate() {
            if d == 0 {
                return Err(CoreError::EmptyModality { modality: i + 1 });
            }
        }
        if latent_dims.iter().sum::<usize>() == 0 {
            return Err(CoreError::ZeroTotalRank);
        }
        // rank condition: full column rank of the active stacked loadings
        for modality in 1..=m {
            let total: usize = structures
                .iter()
                .zip(&latent_dims)
                .filter(|(s, _)| s.contains(modality))
                .map(|(_, r)| r)
                .sum();
            if total > ambient_dims[modality - 1] {
                return Err(CoreError::RankCondition {
                    modality,
                    total,
                    ambient: ambient_dims[modality - 1],
                });
            }
        }
        Ok(HierarchySpec {
            modalities: m,
            ambient_dims,
            structures,
            latent_dims,
        })
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    pub fn ambient_dims(&self) -> &[usize] {
        &self.ambient_dims
    }

    pub fn structures(&self) -> &[Structure] {
        &self.structures
    }

    pub fn latent_dims(&self) -> &[usize] {
        &self.latent_dims
    }

    pub fn latent_dim_of(&self, s: &Structure) -> Option<usize> {
        self.structures
            .iter()
            .position(|c| c == s)
            .map(|i| self.latent_dims[i])
    }

    /// Total ambient dimension d.
    pub fn total_ambient(&self) -> usize {
        self.ambient_dims.iter().sum()
    }

    /// Total latent dimension r.
    pub fn total_latent(&self) -> usize {
        self.latent_dims.iter().sum()
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout::new(self)
    }
}

/// Row/column offsets of the block decomposition and the activity mask.
///
/// Row ranges partition `0..d` in modality order; column ranges partition
/// `0..r` in structure order. `active(m, i)` is true iff modality `m` is a
/// member of structure `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    spec: HierarchySpec,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
    active: Vec<Vec<bool>>,
}

impl BlockLayout {
    pub fn new(spec: &HierarchySpec) -> Self {
        let mut row_offsets = vec![0usize];
        for &d in spec.ambient_dims() {
            row_offsets.push(row_offsets.last().unwrap() + d);
        }
        let mut col_offsets = vec![0usize];
        for &r in spec.latent_dims() {
            col_offsets.push(col_offsets.last().unwrap() + r);
        }
        let active = (1..=spec.modalities())
            .map(|m| spec.structures().iter().map(|s| s.contains(m)).collect())
            .collect();
        BlockLayout {
            spec: spec.clone(),
            row_offsets,
            col_offsets,
            active,
        }
    }

    pub fn spec(&self) -> &HierarchySpec {
        &self.spec
    }

    pub fn total_ambient(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    pub fn total_latent(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }

    pub fn n_structures(&self) -> usize {
        self.spec.structures().len()
    }

    /// Half-open row range of modality `m` (1-indexed).
    pub fn rows(&self, modality: usize) -> Range<usize> {
        self.row_offsets[modality - 1]..self.row_offsets[modality]
    }

    /// Half-open column range of structure index `i` (canonical order).
    pub fn cols(&self, structure_idx: usize) -> Range<usize> {
        self.col_offsets[structure_idx]..self.col_offsets[structure_idx + 1]
    }

    /// True iff modality `m` is a member of structure `i`.
    pub fn active(&self, modality: usize, structure_idx: usize) -> bool {
        self.active[modality - 1][structure_idx]
    }

    /// Stacked row indices of the member modalities of structure `i`.
    pub fn member_rows(&self, structure_idx: usize) -> Vec<usize> {
        let s = &self.spec.structures()[structure_idx];
        s.members()
            .iter()
            .flat_map(|&m| self.rows(m))
            .collect()
    }

    fn check_shape(&self, v: &DMatrix<f64>) -> Result<()> {
        let (d, r) = (self.total_ambient(), self.total_latent());
        if v.nrows() != d || v.ncols() != r {
            return Err(CoreError::ShapeMismatch {
                expected: format!("{d}x{r}"),
                got: format!("{}x{}", v.nrows(), v.ncols()),
            });
        }
        Ok(())
    }

    /// Zeroes every inactive block of `v` in place. Idempotent linear
    /// projection; active blocks are untouched.
    pub fn apply_mask_mut(&self, v: &mut DMatrix<f64>) -> Result<()> {
        self.check_shape(v)?;
        for m in 1..=self.spec.modalities() {
            for i in 0..self.n_structures() {
                if !self.active(m, i) {
                    for c in self.cols(i) {
                        for rr in self.rows(m) {
                            v[(rr, c)] = 0.0;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Returns `v` with every inactive block set to zero.
    pub fn apply_mask(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = v.clone();
        self.apply_mask_mut(&mut out)?;
        Ok(out)
    }

    /// Errors unless every inactive block of `v` is exactly zero.
    pub fn check_mask(&self, v: &DMatrix<f64>) -> Result<()> {
        self.check_shape(v)?;
        for m in 1..=self.spec.modalities() {
            for i in 0..self.n_structures() {
                if !self.active(m, i) {
                    for c in self.cols(i) {
                        for rr in self.rows(m) {
                            if v[(rr, c)] != 0.0 {
                                return Err(CoreError::MaskViolation {
                                    row: rr,
                                    col: c,
                                    value: v[(rr, c)],
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Convenience constructor: full lattice plus its layout.
pub fn build_hierarchy(ambient_dims: &[usize], ranks: RankSpec) -> Result<(HierarchySpec, BlockLayout)> {
    let spec = HierarchySpec::full_lattice(ambient_dims, ranks)?;
    let layout = spec.layout();
    Ok((spec, layout))
}
