//! PASCAL-VOC style evaluation: per-class 11-point AP at IoU 0.5, mAP, the
//! ASC-H/HSIL partial-credit variant, and slide-level triage metrics.

mod ap;
mod credit;
mod matching;
mod triage;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ap::{ap_11point, pr_curve};
pub use credit::{CreditMatrix, ASCH_ON_HSIL_CREDIT, HSIL_ON_ASCH_CREDIT};
pub use matching::{
    match_class, rank_detections, ClassMatch, Credit, MatchedPair, RankedDetection,
};
pub use triage::{percent_1dp, triage, triage_metrics, TriageMetrics, DEFAULT_TAU};

use crate::category::Category;
use crate::detection::{Detection, GroundTruthBox};
use crate::error::{check_range, Result};

/// Whether images are whole slides or individual pyramid tiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Tile,
    #[default]
    Slide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// Use the ASC-H/HSIL partial-credit matrix instead of the identity.
    pub partial_credit: bool,
    pub granularity: Granularity,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            partial_credit: false,
            granularity: Granularity::Slide,
        }
    }
}

impl EvalConfig {
    pub fn credit_matrix(&self) -> CreditMatrix {
        if self.partial_credit {
            CreditMatrix::partial_credit()
        } else {
            CreditMatrix::identity()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub category: Category,
    /// `None` when the class has neither ground truth nor detections.
    pub ap: Option<f64>,
    pub num_gt: usize,
    pub num_detections: usize,
    pub recall_denominator: f64,
    pub tp: f64,
    pub fp: f64,
    /// `[recall, precision]` after each ranked detection.
    pub pr_curve: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub classes: Vec<ClassReport>,
    /// Unweighted mean of the defined per-class APs.
    pub map: f64,
    pub matches: Vec<MatchedPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triage: Option<TriageMetrics>,
}

impl EvalReport {
    pub fn class(&self, c: Category) -> &ClassReport {
        &self.classes[c.index()]
    }

    pub fn ap(&self, c: Category) -> Option<f64> {
        self.class(c).ap
    }
}

/// Evaluates detections against ground truth, pooling every image per class.
pub fn evaluate(
    dets_by_image: &BTreeMap<String, Vec<Detection>>,
    gts_by_image: &BTreeMap<String, Vec<GroundTruthBox>>,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    check_range("iou_threshold", cfg.iou_threshold, 0.0, 1.0)?;
    let credit = cfg.credit_matrix();

    let per_class: Vec<(ClassReport, Vec<MatchedPair>)> = Category::ALL
        .par_iter()
        .map(|&class| {
            let ranked = rank_detections(class, dets_by_image);
            let m = match_class(class, &ranked, gts_by_image, cfg.iou_threshold, &credit)?;
            let num_gt = gts_by_image
                .values()
                .flatten()
                .filter(|g| g.category == class)
                .count();
            let report = ClassReport {
                category: class,
                ap: ap_11point(&m.credits, m.denominator),
                num_gt,
                num_detections: ranked.len(),
                recall_denominator: m.denominator,
                tp: m.credits.iter().map(|c| c.tp).sum(),
                fp: m.credits.iter().map(|c| c.fp).sum(),
                pr_curve: pr_curve(&m.credits, m.denominator)
                    .into_iter()
                    .map(|(r, p)| [r, p])
                    .collect(),
            };
            Ok((report, m.pairs))
        })
        .collect::<Result<_>>()?;

    let mut classes = Vec::with_capacity(per_class.len());
    let mut matches = Vec::new();
    for (report, pairs) in per_class {
        classes.push(report);
        matches.extend(pairs);
    }
    let defined: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(EvalReport {
        config: *cfg,
        classes,
        map,
        matches,
        triage: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    fn gt(img: &str, x: f64, cat: Category) -> GroundTruthBox {
        GroundTruthBox::new(BBox::slide(x, 10.0, 20.0, 20.0).unwrap(), cat, img)
    }

    fn fixture() -> BTreeMap<String, Vec<GroundTruthBox>> {
        let mut m = BTreeMap::new();
        m.insert(
            "a".to_string(),
            Category::ALL
                .iter()
                .enumerate()
                .map(|(i, &c)| gt("a", 30.0 * i as f64, c))
                .collect(),
        );
        m.insert(
            "b".to_string(),
            vec![
                gt("b", 0.0, Category::Asch),
                gt("b", 40.0, Category::Hsil),
                gt("b", 80.0, Category::Hsil),
            ],
        );
        m
    }

    fn echo(
        gts: &BTreeMap<String, Vec<GroundTruthBox>>,
        swap: bool,
    ) -> BTreeMap<String, Vec<Detection>> {
        gts.iter()
            .map(|(k, v)| {
                let dets = v
                    .iter()
                    .map(|g| {
                        let cat = match (swap, g.category) {
                            (true, Category::Asch) => Category::Hsil,
                            (true, Category::Hsil) => Category::Asch,
                            (_, c) => c,
                        };
                        Detection::certain(g.bbox, 1.0, cat).unwrap()
                    })
                    .collect();
                (k.clone(), dets)
            })
            .collect()
    }

    #[test]
    fn echo_detector_is_perfect() {
        let gts = fixture();
        let r = evaluate(&echo(&gts, false), &gts, &EvalConfig::default()).unwrap();
        assert_eq!(r.map, 1.0);
        assert!(r.classes.iter().all(|c| c.ap == Some(1.0)));
    }

    #[test]
    fn swapped_classes_need_partial_credit() {
        let gts = fixture();
        let dets = echo(&gts, true);
        let off = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(off.ap(Category::Asch), Some(0.0));
        assert_eq!(off.ap(Category::Hsil), Some(0.0));

        let on_cfg = EvalConfig {
            partial_credit: true,
            ..EvalConfig::default()
        };
        let on = evaluate(&dets, &gts, &on_cfg).unwrap();
        assert!(on.ap(Category::Asch).unwrap() > 0.0);
        assert!(on.ap(Category::Hsil).unwrap() > 0.0);
        for c in Category::ALL {
            if c != Category::Asch && c != Category::Hsil {
                assert_eq!(on.class(c), off.class(c));
            }
        }
    }

    #[test]
    fn swapped_staircase_values() {
        // the fixture has 2 ASCH and 3 HSIL ground truths, all disjoint
        let gts = fixture();
        let dets = echo(&gts, true);
        let on = evaluate(
            &dets,
            &gts,
            &EvalConfig {
                partial_credit: true,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        // ASCH pass: 3 detections sit on HSIL boxes, each worth 0.51.
        // denominator = 2 + 3 * 0.51; precision 0.51 at every rank.
        let asch = on.class(Category::Asch);
        assert_eq!(asch.num_detections, 3);
        assert!((asch.recall_denominator - 3.53).abs() < 1e-12);
        let final_recall = 1.53 / 3.53;
        let levels = (0..=10)
            .filter(|&i| i as f64 / 10.0 <= final_recall)
            .count() as f64;
        let want = levels * 0.51 / 11.0;
        assert!(
            (asch.ap.unwrap() - want).abs() < 1e-12,
            "{:?} vs {want}",
            asch.ap
        );
    }

    #[test]
    fn empty_classes_excluded_from_map() {
        let mut gts = BTreeMap::new();
        gts.insert("x".to_string(), vec![gt("x", 0.0, Category::Mon)]);
        let dets = echo(&gts, false);
        let r = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.ap(Category::Normal), None);

        // a stray detection of a class with no ground truth scores 0 and counts
        let mut dets = dets;
        dets.get_mut("x").unwrap().push(
            Detection::certain(
                BBox::slide(200.0, 0.0, 5.0, 5.0).unwrap(),
                0.3,
                Category::Dys,
            )
            .unwrap(),
        );
        let r = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(r.ap(Category::Dys), Some(0.0));
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn map_is_mean_of_defined_aps() {
        let gts = fixture();
        let mut dets = echo(&gts, false);
        dets.get_mut("b").unwrap().truncate(1);
        let r = evaluate(&dets, &gts, &EvalConfig::default()).unwrap();
        let aps: Vec<f64> = r.classes.iter().filter_map(|c| c.ap).collect();
        assert_eq!(r.map, aps.iter().sum::<f64>() / aps.len() as f64);
        assert!(r.map < 1.0);
    }
}
