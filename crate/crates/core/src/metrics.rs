//! Pixel-level evaluation of binary segmentation.
//!
//! Counts are pooled over all evaluated pixels by default. When a class is
//! absent from both prediction and truth its F1 and IoU are 1; when it is
//! absent from the truth but predicted they are 0.

use std::io::Write;
use std::ops::{Add, AddAssign};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::raster::Mask;

/// Pixel confusion counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts from the other class's point of view.
    pub fn swapped(&self) -> Self {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    pub fn pixel_accuracy(&self) -> f64 {
        match self.total() {
            0 => 1.0,
            t => (self.tp + self.tn) as f64 / t as f64,
        }
    }

    /// Fraction of this class's true pixels that were found.
    pub fn recall(&self) -> f64 {
        match self.tp + self.fn_ {
            0 => 1.0,
            p => self.tp as f64 / p as f64,
        }
    }

    pub fn precision(&self) -> f64 {
        match self.tp + self.fp {
            0 => 1.0,
            p => self.tp as f64 / p as f64,
        }
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Confusion counts for the positive (ger) class.
pub fn confusion(pred: &Mask, truth: &Mask) -> Result<ConfusionCounts> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", truth.width(), truth.height()),
            got: format!("{}x{}", pred.width(), pred.height()),
        });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.as_slice().iter().zip(truth.as_slice()) {
        match (p != 0, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn miou(per_class: &[ConfusionCounts]) -> f64 {
    if per_class.is_empty() {
        return 1.0;
    }
    per_class.iter().map(ConfusionCounts::iou).sum::<f64>() / per_class.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Sum confusion counts over all tiles, then compute metrics.
    #[default]
    Pooled,
    /// Compute metrics per tile and average them.
    PerTileMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassReport {
    pub f1: f64,
    pub iou: f64,
    pub recall: f64,
}

/// Metrics for the background (index 0) and ger (index 1) classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub classes: [ClassReport; 2],
    pub counts: [ConfusionCounts; 2],
    pub miou: f64,
    pub pixel_accuracy: f64,
}

impl EvaluationReport {
    pub fn ger(&self) -> &ClassReport {
        &self.classes[1]
    }

    /// `class,f1,iou,pixel_accuracy,tp,fp,fn,tn`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["class", "f1", "iou", "pixel_accuracy", "tp", "fp", "fn", "tn"])?;
        for (name, idx) in [("non_ger", 0), ("ger", 1)] {
            let c = &self.counts[idx];
            let r = &self.classes[idx];
            w.write_record([
                name.to_string(),
                r.f1.to_string(),
                r.iou.to_string(),
                self.pixel_accuracy.to_string(),
                c.tp.to_string(),
                c.fp.to_string(),
                c.fn_.to_string(),
                c.tn.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn evaluate<'a, I>(pairs: I, aggregation: Aggregation) -> Result<EvaluationReport>
where
    I: IntoIterator<Item = (&'a Mask, &'a Mask)>,
{
    let per_tile: Vec<ConfusionCounts> = pairs
        .into_iter()
        .map(|(p, t)| confusion(p, t))
        .collect::<Result<_>>()?;
    let pooled = per_tile
        .iter()
        .copied()
        .fold(ConfusionCounts::default(), Add::add);
    let counts = [pooled.swapped(), pooled];
    let classes = match aggregation {
        Aggregation::Pooled => counts.map(|c| ClassReport {
            f1: c.f1(),
            iou: c.iou(),
            recall: c.recall(),
        }),
        Aggregation::PerTileMean => {
            let n = per_tile.len().max(1) as f64;
            let mean = |f: &dyn Fn(&ConfusionCounts) -> f64, swap: bool| {
                per_tile
                    .iter()
                    .map(|c| if swap { f(&c.swapped()) } else { f(c) })
                    .sum::<f64>()
                    / n
            };
            [true, false].map(|swap| ClassReport {
                f1: mean(&ConfusionCounts::f1, swap),
                iou: mean(&ConfusionCounts::iou, swap),
                recall: mean(&ConfusionCounts::recall, swap),
            })
        }
    };
    Ok(EvaluationReport {
        miou: (classes[0].iou + classes[1].iou) / 2.0,
        pixel_accuracy: pooled.pixel_accuracy(),
        classes,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(v: &[u8]) -> Mask {
        Mask::from_values(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_case() {
        let c = confusion(&mask(&[1, 1, 0, 0]), &mask(&[1, 0, 1, 0])).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
    }

    #[test]
    fn identical_and_inverted() {
        let t = mask(&[1, 0, 1, 1, 0]);
        let c = confusion(&t, &t).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!((c.f1(), c.iou(), c.pixel_accuracy()), (1.0, 1.0, 1.0));
        let inv = mask(&[0, 1, 0, 0, 1]);
        let c = confusion(&inv, &t).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));
    }

    #[test]
    fn formula_values() {
        let c = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 0 };
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.iou(), 0.5);
    }

    #[test]
    fn empty_class_conventions() {
        let none = ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 10 };
        assert_eq!((none.f1(), none.iou()), (1.0, 1.0));
        let spurious = ConfusionCounts { tp: 0, fp: 3, fn_: 0, tn: 7 };
        assert_eq!((spurious.f1(), spurious.iou()), (0.0, 0.0));
    }

    #[test]
    fn shape_mismatch() {
        assert!(confusion(&mask(&[1, 0]), &mask(&[1, 0, 0])).is_err());
    }

    #[test]
    fn report_csv_header() {
        let t = mask(&[1, 0, 1, 0]);
        let r = evaluate([(&t, &t)], Aggregation::Pooled).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("class,f1,iou,pixel_accuracy,tp,fp,fn,tn\n"));
        assert_eq!(r.classes[0].f1, 1.0);
        assert_eq!(r.ger().f1, 1.0);
    }

    #[test]
    fn per_tile_mean_differs_from_pooled() {
        let a = (mask(&[1, 1, 0, 0]), mask(&[1, 1, 0, 0]));
        let b = (mask(&[1, 1, 0, 0]), mask(&[0, 0, 0, 1]));
        let pooled = evaluate([(&a.0, &a.1), (&b.0, &b.1)], Aggregation::Pooled).unwrap();
        let mean = evaluate([(&a.0, &a.1), (&b.0, &b.1)], Aggregation::PerTileMean).unwrap();
        assert_eq!(mean.ger().iou, 0.5);
        assert!((pooled.ger().iou - 0.5).abs() > 1e-3);
    }

    fn counts() -> impl Strategy<Value = ConfusionCounts> {
        (0u64..500, 0u64..500, 0u64..500, 0u64..500)
            .prop_map(|(tp, fp, fn_, tn)| ConfusionCounts { tp, fp, fn_, tn })
    }

    proptest! {
        #[test]
        fn f1_iou_identity(c in counts()) {
            let i = c.iou();
            prop_assert!((c.f1() - 2.0 * i / (1.0 + i)).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_counts(c in counts()) {
            let more_tp = ConfusionCounts { tp: c.tp + 1, ..c };
            let more_fp = ConfusionCounts { fp: c.fp + 1, ..c };
            let more_fn = ConfusionCounts { fn_: c.fn_ + 1, ..c };
            prop_assert!(more_tp.f1() >= c.f1() || c.fp + c.fn_ == 0);
            prop_assert!(more_tp.iou() >= c.iou() || c.fp + c.fn_ == 0);
            prop_assert!(more_fp.f1() <= c.f1() && more_fn.f1() <= c.f1());
            prop_assert!(more_fp.iou() <= c.iou() && more_fn.iou() <= c.iou());
        }

        #[test]
        fn label_swap_swaps_metrics(p in proptest::collection::vec(0u8..2, 1..64), seed in any::<u64>()) {
            let t: Vec<u8> = p.iter().enumerate().map(|(i, v)| v ^ (((seed >> (i % 64)) & 1) as u8)).collect();
            let pm = mask(&p);
            let tm = mask(&t);
            let r = evaluate([(&pm, &tm)], Aggregation::Pooled).unwrap();
            let pi = mask(&p.iter().map(|v| 1 - v).collect::<Vec<_>>());
            let ti = mask(&t.iter().map(|v| 1 - v).collect::<Vec<_>>());
            let s = evaluate([(&pi, &ti)], Aggregation::Pooled).unwrap();
            prop_assert_eq!(r.classes[0], s.classes[1]);
            prop_assert_eq!(r.classes[1], s.classes[0]);
        }
    }
}
