//! Segmentation quality metrics and volume calibration against a reference
//! segmentation of the same specimen.
//!
//! The calibration rests on one proportion: the reference software reports
//! `pixels_M` bone pixels and a volume `V_M`; the same voxel size turns the
//! network's `pixels_C` into `V_C = V_M * pixels_C / pixels_M`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{LabelMask, NUM_CLASSES};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.counts[k][k]
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&t| t != k).map(|t| self.counts[t][k]).sum()
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        (0..NUM_CLASSES).filter(|&p| p != k).map(|p| self.counts[k][p]).sum()
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(other_row) {
                *a += b;
            }
        }
    }
}

pub fn confusion(pred: &[LabelMask], truth: &[LabelMask]) -> Result<ConfusionCounts> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predicted slices against {} reference slices",
            pred.len(),
            truth.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (i, (p, t)) in pred.iter().zip(truth).enumerate() {
        if (p.width(), p.height()) != (t.width(), t.height()) {
            return Err(Error::Shape(format!(
                "slice {i}: prediction {}x{} vs reference {}x{}",
                p.width(),
                p.height(),
                t.width(),
                t.height()
            )));
        }
        for (&pl, &tl) in p.labels().iter().zip(t.labels()) {
            c.counts[tl as usize][pl as usize] += 1;
        }
    }
    Ok(c)
}

pub fn pixel_accuracy(c: &ConfusionCounts) -> Result<f64> {
    match c.total() {
        0 => Err(Error::Argument("accuracy of an empty confusion matrix".into())),
        total => Ok(c.trace() as f64 / total as f64),
    }
}

/// Dice overlap for class `k`; 1.0 when the class appears in neither input.
pub fn dice(c: &ConfusionCounts, k: usize) -> Result<f64> {
    if k >= NUM_CLASSES {
        return Err(Error::Argument(format!("class {k} out of range")));
    }
    let tp = c.true_positives(k) as f64;
    let denom = 2.0 * tp + (c.false_positives(k) + c.false_negatives(k)) as f64;
    Ok(if denom == 0.0 { 1.0 } else { 2.0 * tp / denom })
}

pub fn count_class_pixels(stack: &[LabelMask], class: u8) -> u64 {
    stack.iter().map(|m| m.count(class)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumetryReport {
    pub pixels_c: u64,
    pub pixels_m: u64,
    /// Reference volume in mm³.
    pub v_m: f64,
    /// Calibrated network volume in mm³.
    pub v_c: f64,
    pub ratio: f64,
}

pub fn calibrate_volume(pixels_c: u64, pixels_m: u64, v_m: f64) -> Result<VolumetryReport> {
    if pixels_m == 0 {
        return Err(Error::Argument("reference pixel count must be positive".into()));
    }
    if !(v_m > 0.0 && v_m.is_finite()) {
        return Err(Error::Argument(format!("reference volume must be positive, got {v_m}")));
    }
    let ratio = pixels_c as f64 / pixels_m as f64;
    Ok(VolumetryReport {
        pixels_c,
        pixels_m,
        v_m,
        v_c: v_m * ratio,
        ratio,
    })
}

pub const REPORT_HEADER: &str = "pixels_C,pixels_M,V_M,V_C,ratio,accuracy,dice_0,dice_1,dice_2";

pub fn format_report(report: &VolumetryReport, c: &ConfusionCounts) -> Result<String> {
    let accuracy = pixel_accuracy(c)?;
    let mut row = format!(
        "{},{},{:.6},{:.6},{:.6},{:.6}",
        report.pixels_c, report.pixels_m, report.v_m, report.v_c, report.ratio, accuracy
    );
    for k in 0..NUM_CLASSES {
        row.push_str(&format!(",{:.6}", dice(c, k)?));
    }
    Ok(format!("{REPORT_HEADER}\n{row}\n"))
}

pub const VOLUME_HEADER: &str = "pixels_C,pixels_M,V_M,V_C,ratio";

/// The calibration columns alone, for stacks without a reference segmentation.
pub fn format_volume(report: &VolumetryReport) -> String {
    format!(
        "{VOLUME_HEADER}\n{},{},{:.6},{:.6},{:.6}\n",
        report.pixels_c, report.pixels_m, report.v_m, report.v_c, report.ratio
    )
}

/// Writes the report CSV. Nothing is created when the metrics are undefined.
pub fn report(report: &VolumetryReport, c: &ConfusionCounts, path: impl AsRef<Path>) -> Result<()> {
    let text = format_report(report, c)?;
    fs::write(path, text)?;
    Ok(())
}

/// Reference pixel count and volume exported from another segmentation tool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceVolume {
    pub pixels_m: u64,
    pub v_m: f64,
}

/// Parses `pixels_M=<int>` on line 1 and `V_M_mm3=<decimal>` on line 2.
pub fn parse_reference(text: &str) -> Result<ReferenceVolume> {
    let mut lines = text.lines();
    let mut field = |line_no: usize, key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Validation(format!("reference line {line_no}: missing {key}")))?;
        line.trim()
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix('='))
            .map(|v| v.trim().to_string())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "reference line {line_no}: expected {key}=<value>, got {line:?}"
                ))
            })
    };
    let pixels = field(1, "pixels_M")?;
    let volume = field(2, "V_M_mm3")?;
    let pixels_m = pixels
        .parse()
        .map_err(|_| Error::Validation(format!("reference line 1: pixels_M {pixels:?} is not an integer")))?;
    let v_m = volume
        .parse()
        .map_err(|_| Error::Validation(format!("reference line 2: V_M_mm3 {volume:?} is not a number")))?;
    Ok(ReferenceVolume { pixels_m, v_m })
}

pub fn read_reference(path: impl AsRef<Path>) -> Result<ReferenceVolume> {
    parse_reference(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, labels: &[u8]) -> LabelMask {
        LabelMask::new(w, h, labels.to_vec()).unwrap()
    }

    fn matrix(entries: [u64; 9]) -> ConfusionCounts {
        let mut c = ConfusionCounts::default();
        for (i, v) in entries.into_iter().enumerate() {
            c.counts[i / 3][i % 3] = v;
        }
        c
    }

    #[test]
    fn identical_stacks_are_diagonal() {
        let m = mask(2, 2, &[0, 1, 2, 1]);
        let c = confusion(&[m.clone(), m.clone()], &[m.clone(), m]).unwrap();
        assert_eq!(c.trace(), 8);
        assert_eq!(c.total(), 8);
        assert_eq!(pixel_accuracy(&c).unwrap(), 1.0);
        for k in 0..3 {
            assert_eq!(dice(&c, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn all_background_predicted_as_bone() {
        let c = confusion(
            &[LabelMask::filled(3, 2, 1).unwrap()],
            &[LabelMask::filled(3, 2, 0).unwrap()],
        )
        .unwrap();
        let mut expected = ConfusionCounts::default();
        expected.counts[0][1] = 6;
        assert_eq!(c, expected);
        assert_eq!(dice(&c, 0).unwrap(), 0.0);
        assert_eq!(dice(&c, 1).unwrap(), 0.0);
        assert_eq!(dice(&c, 2).unwrap(), 1.0);
    }

    #[test]
    fn mismatches_are_shape_errors() {
        let a = LabelMask::filled(2, 2, 0).unwrap();
        let b = LabelMask::filled(2, 3, 0).unwrap();
        assert!(matches!(
            confusion(std::slice::from_ref(&a), &[b]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            confusion(std::slice::from_ref(&a), &[a.clone(), a.clone()]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn accuracy_values() {
        assert_eq!(pixel_accuracy(&matrix([98, 1, 0, 1, 0, 0, 0, 0, 0])).unwrap(), 0.98);
        assert!(matches!(
            pixel_accuracy(&ConfusionCounts::default()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn uniform_guessing_is_one_third_accurate() {
        // Every (truth, prediction) pair on a balanced 3x3 grid exactly once.
        let truth: Vec<u8> = (0..9).map(|i| (i / 3) as u8).collect();
        let pred: Vec<u8> = (0..9).map(|i| (i % 3) as u8).collect();
        let c = confusion(&[mask(3, 3, &pred)], &[mask(3, 3, &truth)]).unwrap();
        assert!((pixel_accuracy(&c).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn half_overlap_dice() {
        let truth = mask(4, 1, &[1, 1, 0, 0]);
        let pred = mask(4, 1, &[0, 1, 1, 0]);
        let c = confusion(&[pred], &[truth]).unwrap();
        assert_eq!(dice(&c, 1).unwrap(), 0.5);
        assert!(dice(&c, 3).is_err());
    }

    #[test]
    fn counting() {
        assert_eq!(count_class_pixels(&[], 1), 0);
        assert_eq!(
            count_class_pixels(&[LabelMask::filled(512, 512, 1).unwrap()], 1),
            262_144
        );
        // 15 full slices plus a partial one: 15 * 262144 + 221936 = 4154096.
        let mut stack = vec![LabelMask::filled(512, 512, 1).unwrap(); 15];
        let partial: Vec<u8> = (0..262_144).map(|i| u8::from(i < 221_936)).collect();
        stack.push(mask(512, 512, &partial));
        assert_eq!(count_class_pixels(&stack, 1), 4_154_096);
    }

    #[test]
    fn published_calibration() {
        let r = calibrate_volume(4_154_096, 23_546_219, 365.03).unwrap();
        assert!((r.v_c - 64.40).abs() <= 0.01, "{}", r.v_c);
        assert!((r.ratio - 0.1764).abs() <= 1e-4, "{}", r.ratio);
        assert!((r.v_c * 23_546_219.0 - 365.03 * 4_154_096.0).abs() <= 1e-9 * r.v_c * 23_546_219.0);
    }

    #[test]
    fn calibration_identities_and_errors() {
        assert_eq!(calibrate_volume(77, 77, 12.5).unwrap().v_c, 12.5);
        assert_eq!(calibrate_volume(50, 100, 10.0).unwrap().v_c, 5.0);
        assert_eq!(calibrate_volume(0, 100, 10.0).unwrap().v_c, 0.0);
        assert!(matches!(calibrate_volume(1, 0, 1.0), Err(Error::Argument(_))));
        assert!(matches!(calibrate_volume(1, 1, 0.0), Err(Error::Argument(_))));
        assert!(matches!(calibrate_volume(1, 1, f64::NAN), Err(Error::Argument(_))));
    }

    #[test]
    fn report_csv() {
        let r = calibrate_volume(4_154_096, 23_546_219, 365.03).unwrap();
        let c = matrix([10, 0, 0, 1, 8, 1, 0, 0, 5]);
        let text = format_report(&r, &c).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(REPORT_HEADER));
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 9);
        assert_eq!(fields[..3], ["4154096", "23546219", "365.030000"]);
        assert_eq!(format!("{:.2}", fields[3].parse::<f64>().unwrap()), "64.40");
        assert!(lines.next().is_none());
        assert!(text.starts_with(&format_volume(&r).lines().next().unwrap().to_string()));
        assert_eq!(format_volume(&r).lines().nth(1).unwrap(), &row[..row.len() - 36]);

        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        report(&r, &c, &a).unwrap();
        report(&r, &c, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let empty = dir.path().join("empty.csv");
        assert!(matches!(
            report(&r, &ConfusionCounts::default(), &empty),
            Err(Error::Argument(_))
        ));
        assert!(!empty.exists());
    }

    #[test]
    fn reference_file() {
        let r = parse_reference("pixels_M=23546219\nV_M_mm3=365.03\n").unwrap();
        assert_eq!(
            r,
            ReferenceVolume {
                pixels_m: 23_546_219,
                v_m: 365.03
            }
        );
        let err = parse_reference("pixels_M=5\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("V_M_mm3"), "{err}");
        let err = parse_reference("V_M_mm3=1\npixels_M=5\n").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(parse_reference("pixels_M=x\nV_M_mm3=1\n").is_err());
    }

    proptest! {
        #[test]
        fn calibration_is_linear(pc in 0u64..1_000_000_000, pm in 1u64..1_000_000_000, vm in 0.001f64..1e6) {
            let base = calibrate_volume(pc, pm, vm).unwrap().v_c;
            let doubled_volume = calibrate_volume(pc, pm, 2.0 * vm).unwrap().v_c;
            prop_assert!((doubled_volume - 2.0 * base).abs() <= 1e-12 * base.abs().max(f64::MIN_POSITIVE));
            if pc < u64::MAX / 2 {
                let doubled_pixels = calibrate_volume(2 * pc, pm, vm).unwrap().v_c;
                prop_assert!((doubled_pixels - 2.0 * base).abs() <= 1e-12 * base.abs().max(f64::MIN_POSITIVE));
            }
        }

        #[test]
        fn dice_bounds_and_accuracy_identity(entries in prop::array::uniform9(0u64..1000)) {
            let c = matrix(entries);
            for k in 0..3 {
                let d = dice(&c, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&d));
                let perfect = c.false_positives(k) == 0 && c.false_negatives(k) == 0;
                prop_assert_eq!(d == 1.0, perfect);
            }
            if c.total() > 0 {
                // Accuracy is the prevalence-weighted mean of per-class recall.
                let total = c.total() as f64;
                let weighted: f64 = (0..3)
                    .map(|k| {
                        let row: u64 = c.counts[k].iter().sum();
                        if row == 0 { 0.0 } else { (row as f64 / total) * (c.counts[k][k] as f64 / row as f64) }
                    })
                    .sum();
                prop_assert!((pixel_accuracy(&c).unwrap() - weighted).abs() < 1e-12);
            }
        }

        #[test]
        fn confusion_conserves_pixels(
            (w, h, a, b) in (1usize..6, 1usize..6).prop_flat_map(|(w, h)| (
                Just(w), Just(h),
                prop::collection::vec(0u8..3, w * h),
                prop::collection::vec(0u8..3, w * h),
            ))
        ) {
            let c = confusion(&[mask(w, h, &a), mask(w, h, &b)], &[mask(w, h, &b), mask(w, h, &a)]).unwrap();
            prop_assert_eq!(c.total(), 2 * (w * h) as u64);
        }
    }
}
