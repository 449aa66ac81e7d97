use serde::{Deserialize, Serialize};

use crate::category::{Category, NUM_CLASSES};

/// Credit a detection earns when matched to ground truth of another class.
pub const ASCH_ON_HSIL_CREDIT: f64 = 0.51;
pub const HSIL_ON_ASCH_CREDIT: f64 = 0.66;

/// `C[pred][truth]`: true-positive weight for a detection of class `pred`
/// matched to ground truth of class `truth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditMatrix(pub [[f64; NUM_CLASSES]; NUM_CLASSES]);

impl CreditMatrix {
    pub fn identity() -> CreditMatrix {
        let mut m = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        CreditMatrix(m)
    }

    /// Identity plus the ASC-H/HSIL mutual partial credit.
    pub fn partial_credit() -> CreditMatrix {
        let mut c = CreditMatrix::identity();
        c.0[Category::Asch.index()][Category::Hsil.index()] = ASCH_ON_HSIL_CREDIT;
        c.0[Category::Hsil.index()][Category::Asch.index()] = HSIL_ON_ASCH_CREDIT;
        c
    }

    pub fn get(&self, pred: Category, truth: Category) -> f64 {
        self.0[pred.index()][truth.index()]
    }

    pub fn is_identity(&self) -> bool {
        *self == CreditMatrix::identity()
    }
}

impl Default for CreditMatrix {
    fn default() -> Self {
        CreditMatrix::identity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_entries() {
        let c = CreditMatrix::partial_credit();
        assert_eq!(c.get(Category::Asch, Category::Hsil), 0.51);
        assert_eq!(c.get(Category::Hsil, Category::Asch), 0.66);
        let mut off_diagonal = 0;
        for p in Category::ALL {
            for t in Category::ALL {
                if p == t {
                    assert_eq!(c.get(p, t), 1.0);
                } else if c.get(p, t) != 0.0 {
                    off_diagonal += 1;
                }
            }
        }
        assert_eq!(off_diagonal, 2);
        assert!(CreditMatrix::identity().is_identity());
        assert!(!c.is_identity());
    }
}
