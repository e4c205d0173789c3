//! Exact importance weights `w = T(x)/S(x)` for tasks built by mixing two
//! base datasets ("origins") per class.
//!
//! Within a `(class, origin)` cell the source and target receive uniformly
//! random subsets, so the conditional density of `x` in the cell is the same
//! in both domains and the ratio collapses to a ratio of cell frequencies:
//! `w[c][o] = (t_co / #T) / (s_co / #S)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class, per-origin mixing proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureTaskSpec {
    pub num_classes: usize,
    /// Fraction of class-`c` origin-1 rows assigned to the source; the
    /// complementary `1 − share` of origin-0 rows also goes to the source.
    pub source_share: Vec<f64>,
    /// `[origin-0 count, origin-1 count]` per class.
    pub per_class_counts: Vec<[usize; 2]>,
    /// Classes below the threshold become label 0, the rest label 1.
    pub binary_relabel_threshold: u32,
}

impl MixtureTaskSpec {
    /// Ten-class schedule where class `c` takes `(c+1)/12` of origin 1 and
    /// `(11−c)/12` of origin 0 into the source; classes 0–4 map to label 0.
    pub fn digit_schedule(per_class_counts: Vec<[usize; 2]>) -> Self {
        let num_classes = per_class_counts.len();
        Self {
            num_classes,
            source_share: (0..num_classes).map(|c| (c + 1) as f64 / 12.0).collect(),
            per_class_counts,
            binary_relabel_threshold: (num_classes / 2) as u32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be >= 1".into()));
        }
        if self.source_share.len() != self.num_classes || self.per_class_counts.len() != self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "expected {} shares and count pairs, got {} and {}",
                self.num_classes,
                self.source_share.len(),
                self.per_class_counts.len()
            )));
        }
        for (c, &s) in self.source_share.iter().enumerate() {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::OverlapViolated(format!(
                    "class {c} source share {s} must lie strictly inside (0,1)"
                )));
            }
        }
        if let Some(c) = self.per_class_counts.iter().position(|n| n[0] == 0 || n[1] == 0) {
            return Err(Error::InvalidArgument(format!("class {c} has an empty origin")));
        }
        Ok(())
    }

    /// Realized `[source, target]` row counts for `(class, origin)`.
    pub fn cell_counts(&self, class: usize, origin: usize) -> (usize, usize) {
        let total = self.per_class_counts[class][origin];
        let share = match origin {
            0 => 1.0 - self.source_share[class],
            _ => self.source_share[class],
        };
        let src = (share * total as f64).round() as usize;
        (src, total - src)
    }

    pub fn binary_label(&self, class: u32) -> u32 {
        u32::from(class >= self.binary_relabel_threshold)
    }
}

/// One row of the weight table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub class: usize,
    pub origin: usize,
    pub source_count: usize,
    pub target_count: usize,
    pub weight: f64,
}

/// `(class, origin) → w` lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub rows: Vec<WeightRow>,
    pub source_total: usize,
    pub target_total: usize,
}

impl WeightTable {
    /// Table from realized cell counts, `counts[c][o] = (source, target)`.
    pub fn from_counts(counts: &[[(usize, usize); 2]]) -> Result<Self> {
        let source_total: usize = counts.iter().flatten().map(|c| c.0).sum();
        let target_total: usize = counts.iter().flatten().map(|c| c.1).sum();
        if source_total == 0 || target_total == 0 {
            return Err(Error::EmptyData("source or target of mixture task"));
        }
        let mut rows = Vec::with_capacity(counts.len() * 2);
        for (class, cells) in counts.iter().enumerate() {
            for (origin, &(s, t)) in cells.iter().enumerate() {
                if s == 0 || t == 0 {
                    return Err(Error::OverlapViolated(format!(
                        "class {class} origin {origin} has {s} source and {t} target rows"
                    )));
                }
                // single rounding: numerator and denominator are exact integers in f64
                let weight = (t as f64 * source_total as f64) / (s as f64 * target_total as f64);
                rows.push(WeightRow {
                    class,
                    origin,
                    source_count: s,
                    target_count: t,
                    weight,
                });
            }
        }
        Ok(Self {
            rows,
            source_total,
            target_total,
        })
    }

    pub fn lookup(&self, class: usize, origin: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.class == class && r.origin == origin)
            .map(|r| r.weight)
    }

    pub fn max_weight(&self) -> f64 {
        self.rows.iter().map(|r| r.weight).fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV with header `class,origin,source_count,target_count,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "origin", "source_count", "target_count", "weight"])?;
        for r in &self.rows {
            w.write_record([
                r.class.to_string(),
                r.origin.to_string(),
                r.source_count.to_string(),
                r.target_count.to_string(),
                r.weight.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weight table implied by a mixture spec.
pub fn mixture_weights(spec: &MixtureTaskSpec) -> Result<WeightTable> {
    spec.validate()?;
    let counts: Vec<[(usize, usize); 2]> = (0..spec.num_classes)
        .map(|c| [spec.cell_counts(c, 0), spec.cell_counts(c, 1)])
        .collect();
    WeightTable::from_counts(&counts)
}

/// Supremum of the density ratio, the largest weight in the table.
pub fn beta_infinity(spec: &MixtureTaskSpec) -> Result<f64> {
    Ok(mixture_weights(spec)?.max_weight())
}

/// Weight of shared-origin source rows when `move_fraction` of a shared pool
/// joins a source-only pool and the rest forms the target:
/// `((1 − f)/f) · (#S/#T)`.
pub fn one_sided_weight(move_fraction: f64, source_total: usize, target_total: usize) -> Result<f64> {
    if !(move_fraction > 0.0 && move_fraction < 1.0) {
        return Err(Error::OverlapViolated(format!(
            "move fraction {move_fraction} must lie strictly inside (0,1)"
        )));
    }
    if source_total == 0 || target_total == 0 {
        return Err(Error::EmptyData("source or target of one-sided task"));
    }
    Ok((1.0 - move_fraction) / move_fraction * source_total as f64 / target_total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digits(n: usize) -> MixtureTaskSpec {
        MixtureTaskSpec::digit_schedule(vec![[n, n]; 10])
    }

    #[test]
    fn digit_schedule_weights() {
        let t = mixture_weights(&digits(1200)).unwrap();
        assert_eq!(t.lookup(0, 1), Some(11.0));
        assert!((t.lookup(0, 0).unwrap() - 1.0 / 11.0).abs() < 1e-15);
        assert!((t.lookup(0, 0).unwrap() - 0.0909).abs() < 1e-4);
        assert_eq!(beta_infinity(&digits(1200)).unwrap(), 11.0);
        assert_eq!(t.source_total, t.target_total);
    }

    #[test]
    fn no_shift_is_unit() {
        let spec = MixtureTaskSpec {
            num_classes: 3,
            source_share: vec![0.5; 3],
            per_class_counts: vec![[100, 60]; 3],
            binary_relabel_threshold: 1,
        };
        let t = mixture_weights(&spec).unwrap();
        assert!(t.rows.iter().all(|r| r.weight == 1.0));
        assert_eq!(beta_infinity(&spec).unwrap(), 1.0);
    }

    #[test]
    fn mass_balance_identity() {
        let spec = MixtureTaskSpec::digit_schedule((0..10).map(|c| [300 + 7 * c, 250 + 13 * c]).collect());
        let t = mixture_weights(&spec).unwrap();
        let ratio = t.source_total as f64 / t.target_total as f64;
        for r in &t.rows {
            let lhs = r.source_count as f64 * r.weight;
            let rhs = r.target_count as f64 * ratio;
            assert!((lhs - rhs).abs() <= 1e-12 * rhs);
        }
    }

    #[test]
    fn overlap_violation_refused() {
        let mut spec = digits(120);
        spec.source_share[3] = 1.0;
        assert!(matches!(mixture_weights(&spec), Err(Error::OverlapViolated(_))));
        spec.source_share[3] = 0.0;
        assert!(matches!(beta_infinity(&spec), Err(Error::OverlapViolated(_))));
        // a share that rounds a cell to zero rows also violates overlap
        let tiny = MixtureTaskSpec::digit_schedule(vec![[2, 2]; 10]);
        assert!(matches!(mixture_weights(&tiny), Err(Error::OverlapViolated(_))));
    }

    #[test]
    fn one_sided_xray_counts() {
        let w = one_sided_weight(0.2, 246_072, 89_696).unwrap();
        assert!((w - 4.0 * 246_072.0 / 89_696.0).abs() < 1e-12);
        assert!((w - 10.974).abs() < 1e-3);
        assert_eq!(one_sided_weight(0.5, 100, 100).unwrap(), 1.0);
        assert!(one_sided_weight(0.0, 1, 1).is_err());
        assert!(one_sided_weight(1.0, 1, 1).is_err());
    }

    #[test]
    fn csv_export() {
        let spec = MixtureTaskSpec {
            num_classes: 1,
            source_share: vec![0.25],
            per_class_counts: vec![[4, 4]],
            binary_relabel_threshold: 1,
        };
        let mut buf = Vec::new();
        mixture_weights(&spec).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "class,origin,source_count,target_count,weight\n0,0,3,1,0.3333333333333333\n0,1,1,3,3\n"
        );
    }
}
