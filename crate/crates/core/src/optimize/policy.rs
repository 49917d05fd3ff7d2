use serde::{Deserialize, Serialize};

use crate::detector::Category;

/// What the optimiser may do to one layer category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryPolicy {
    pub quantize: bool,
    pub prune: bool,
    /// Kept at full precision regardless of `quantize`.
    pub precision_exempt: bool,
}

impl CategoryPolicy {
    pub fn quantizes(self) -> bool {
        self.quantize && !self.precision_exempt
    }
}

/// Per-category optimisation flags.
///
/// The default follows the component table: backbone, fusion and head layers
/// are quantized and pruned; latitude-scaled convolutions are quantized but
/// never pruned (their correction must survive); attention stays at full
/// precision and is never pruned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizationPolicy {
    pub eac: CategoryPolicy,
    pub spatial: CategoryPolicy,
    pub temporal: CategoryPolicy,
    pub fusion: CategoryPolicy,
    pub attention: CategoryPolicy,
    pub head: CategoryPolicy,
}

const FULL: CategoryPolicy = CategoryPolicy {
    quantize: true,
    prune: true,
    precision_exempt: false,
};

impl Default for OptimizationPolicy {
    fn default() -> Self {
        OptimizationPolicy {
            eac: CategoryPolicy {
                quantize: true,
                prune: false,
                precision_exempt: false,
            },
            spatial: FULL,
            temporal: FULL,
            fusion: FULL,
            attention: CategoryPolicy {
                quantize: false,
                prune: false,
                precision_exempt: true,
            },
            head: FULL,
        }
    }
}

impl OptimizationPolicy {
    /// The default table with no pruning anywhere.
    pub fn quantize_only() -> Self {
        let mut p = Self::default();
        for c in [&mut p.spatial, &mut p.temporal, &mut p.fusion, &mut p.head] {
            c.prune = false;
        }
        p
    }

    pub fn for_category(&self, c: Category) -> CategoryPolicy {
        match c {
            Category::Eac => self.eac,
            Category::Spatial => self.spatial,
            Category::Temporal => self.temporal,
            Category::Fusion => self.fusion,
            Category::Attention => self.attention,
            Category::Head => self.head,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table() {
        let p = OptimizationPolicy::default();
        assert!(p.eac.quantizes() && !p.eac.prune);
        assert!(!p.attention.quantizes() && !p.attention.prune && p.attention.precision_exempt);
        for c in [Category::Spatial, Category::Temporal, Category::Fusion, Category::Head] {
            assert!(p.for_category(c).quantizes() && p.for_category(c).prune);
        }
        assert!(!OptimizationPolicy::quantize_only().head.prune);
    }
}
