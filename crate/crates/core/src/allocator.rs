//! Per-frame token targets from normalized weights and a total budget.

use crate::error::{QuotaError, Result};
use crate::model::{AllocationPlan, Grid, NormalizedScores, WEIGHT_SUM_TOLERANCE};

/// Slack when testing `w * budget > cap`, so a frame clamped to exactly the
/// cap is not re-selected because of rounding.
const CAP_EPSILON: f64 = 1e-9;

/// Integer targets `N_i ~ w_i * budget`, each at least one token, summing to
/// at most `budget`.
pub fn allocate_budget(weights: &NormalizedScores, budget: usize) -> Result<Vec<usize>> {
    allocate_budget_capped(weights, budget, None)
}

/// Like [`allocate_budget`] but never hands a leftover token to a frame that
/// already sits at `cap`.
///
/// Floors of the exact shares are handed out first, then leftover tokens go
/// to the largest fractional remainders (lowest index on ties). Frames left
/// at zero are raised to one token, taking the tokens back from the largest
/// allocations (highest index on ties).
pub fn allocate_budget_capped(
    weights: &NormalizedScores,
    budget: usize,
    cap: Option<usize>,
) -> Result<Vec<usize>> {
    let w = weights.as_slice();
    let frames = w.len();
    if budget < frames {
        return Err(QuotaError::BudgetTooSmall { budget, frames });
    }
    let exact: Vec<f64> = w.iter().map(|&wi| wi * budget as f64).collect();
    let mut targets: Vec<usize> = exact
        .iter()
        .map(|&e| {
            let t = e.floor() as usize;
            cap.map_or(t, |c| t.min(c))
        })
        .collect();

    let mut order: Vec<usize> = (0..frames).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut leftover = budget.saturating_sub(targets.iter().sum());
    while leftover > 0 {
        let before = leftover;
        for &i in &order {
            if leftover == 0 {
                break;
            }
            if cap.is_some_and(|c| targets[i] >= c) {
                continue;
            }
            targets[i] += 1;
            leftover -= 1;
        }
        if leftover == before {
            // Every frame is at its cap.
            break;
        }
    }

    let deficit = targets.iter().filter(|&&t| t == 0).count();
    for t in targets.iter_mut().filter(|t| **t == 0) {
        *t = 1;
    }
    for _ in 0..deficit {
        let used: usize = targets.iter().sum();
        if used <= budget {
            break;
        }
        let donor = (0..frames)
            .max_by_key(|&i| targets[i])
            .expect("at least one frame");
        debug_assert!(targets[donor] > 1);
        targets[donor] -= 1;
    }
    debug_assert!(targets.iter().sum::<usize>() <= budget);
    Ok(targets)
}

/// Largest near-square grid with at most `n` tokens: `h = w = floor(sqrt(n))`,
/// with one extra row when that still fits.
pub fn solve_grid(n: usize) -> Result<Grid> {
    if n == 0 {
        return Err(QuotaError::NonPositiveTarget);
    }
    let side = n.isqrt();
    let height = if (side + 1) * side <= n {
        side + 1
    } else {
        side
    };
    Ok(Grid::new(height, side))
}

/// [`solve_grid`], falling back to the largest grid that fits inside a
/// `max_h x max_w` source when the near-square grid does not.
pub fn solve_grid_within(n: usize, max_h: usize, max_w: usize) -> Result<Grid> {
    let grid = solve_grid(n)?;
    if grid.height <= max_h && grid.width <= max_w {
        return Ok(grid);
    }
    let mut best = Grid::new(1, 1);
    for h in 1..=max_h.min(n) {
        let w = (n / h).min(max_w);
        if w == 0 {
            break;
        }
        let candidate = Grid::new(h, w);
        let squareness = |g: Grid| g.height.abs_diff(g.width);
        if candidate.tokens() > best.tokens()
            || (candidate.tokens() == best.tokens() && squareness(candidate) < squareness(best))
        {
            best = candidate;
        }
    }
    Ok(best)
}

/// Weights after capping plus a trace of the fixed-point iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Redistribution {
    pub weights: NormalizedScores,
    /// Number of passes that clamped at least one frame.
    pub passes: usize,
    /// Weight sum after each pass.
    pub pass_sums: Vec<f64>,
    /// Frames clamped to the cap.
    pub clamped: Vec<bool>,
}

/// Caps every frame at `cap / budget` of the total weight and hands the excess
/// to the uncapped frames in proportion to their weight, repeating until no
/// frame is over the cap.
pub fn redistribute_weights(
    weights: &NormalizedScores,
    budget: usize,
    cap: usize,
) -> Result<NormalizedScores> {
    redistribute_weights_traced(weights, budget, cap).map(|r| r.weights)
}

pub fn redistribute_weights_traced(
    weights: &NormalizedScores,
    budget: usize,
    cap: usize,
) -> Result<Redistribution> {
    let frames = weights.len();
    if budget == 0 || cap == 0 || budget > frames.saturating_mul(cap) {
        return Err(QuotaError::InfeasibleBudget {
            budget,
            frames,
            cap,
        });
    }
    let limit = cap as f64 / budget as f64;
    let mut w = weights.as_slice().to_vec();
    let mut clamped = vec![false; frames];
    let mut pass_sums = Vec::new();

    loop {
        let over: Vec<usize> = (0..frames)
            .filter(|&i| !clamped[i] && w[i] * budget as f64 > cap as f64 + CAP_EPSILON)
            .collect();
        if over.is_empty() {
            break;
        }
        let excess: f64 = over.iter().map(|&k| w[k] - limit).sum();
        for &k in &over {
            w[k] = limit;
            clamped[k] = true;
        }
        let receivers: Vec<usize> = (0..frames).filter(|&i| !clamped[i]).collect();
        let receiver_mass: f64 = receivers.iter().map(|&j| w[j]).sum();
        if receiver_mass > 0.0 {
            for &j in &receivers {
                w[j] += w[j] / receiver_mass * excess;
            }
        } else if !receivers.is_empty() {
            // Proportional shares are undefined when every receiver has zero weight.
            let share = excess / receivers.len() as f64;
            for &j in &receivers {
                w[j] += share;
            }
        }
        let sum: f64 = w.iter().sum();
        debug_assert!((sum - 1.0).abs() <= WEIGHT_SUM_TOLERANCE, "pass sum {sum}");
        pass_sums.push(sum);
    }

    // Clamp rounding noise so the weights stay inside [0, 1].
    for v in &mut w {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(Redistribution {
        passes: pass_sums.len(),
        weights: NormalizedScores::new(w)?,
        pass_sums,
        clamped,
    })
}

/// Targets and grids for a video whose frames share one `source` grid.
///
/// Down-sampling assigners (`cap_to_source`) first cap weights at the source
/// grid size so no frame is asked to grow.
pub fn plan_allocation(
    weights: &NormalizedScores,
    budget: usize,
    source: Grid,
    cap_to_source: bool,
) -> Result<(NormalizedScores, AllocationPlan)> {
    let frames = weights.len();
    if budget < frames {
        return Err(QuotaError::BudgetTooSmall { budget, frames });
    }
    let (weights, targets) = if cap_to_source {
        let cap = source.tokens();
        let adjusted = redistribute_weights(weights, budget, cap)?;
        let targets = allocate_budget_capped(&adjusted, budget, Some(cap))?;
        (adjusted, targets)
    } else {
        (weights.clone(), allocate_budget(weights, budget)?)
    };
    let grids = targets
        .iter()
        .map(|&n| {
            if cap_to_source {
                solve_grid_within(n, source.height, source.width)
            } else {
                solve_grid(n)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let plan = AllocationPlan::new(budget, targets, grids)?;
    Ok((weights, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ns(v: &[f64]) -> NormalizedScores {
        NormalizedScores::new(v.to_vec()).unwrap()
    }

    /// Every composition of `total` into `parts` non-negative integers.
    fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
        if parts == 1 {
            return vec![vec![total]];
        }
        (0..=total)
            .flat_map(|first| {
                compositions(total - first, parts - 1)
                    .into_iter()
                    .map(move |mut rest| {
                        rest.insert(0, first);
                        rest
                    })
            })
            .collect()
    }

    #[test]
    fn uniform_64_frames() {
        let t = allocate_budget(&NormalizedScores::uniform(64).unwrap(), 12544).unwrap();
        assert!(t.iter().all(|&n| n == 196));
    }

    #[test]
    fn exact_split() {
        assert_eq!(
            allocate_budget(&ns(&[0.5, 0.5]), 100).unwrap(),
            vec![50, 50]
        );
    }

    #[test]
    fn thirds_match_exhaustive_minimum() {
        let w = ns(&[1.0 / 3.0; 3]);
        let got = allocate_budget(&w, 100).unwrap();
        assert_eq!(got, vec![34, 33, 33]);

        let cost = |t: &[usize]| -> f64 {
            t.iter()
                .zip(w.as_slice())
                .map(|(&n, &wi)| (n as f64 - wi * 100.0).abs())
                .sum()
        };
        let best = compositions(100, 3)
            .into_iter()
            .map(|t| cost(&t))
            .fold(f64::INFINITY, f64::min);
        assert!((cost(&got) - best).abs() < 1e-9);
    }

    #[test]
    fn budget_floor() {
        assert!(matches!(
            allocate_budget(&ns(&[0.5, 0.5]), 1),
            Err(QuotaError::BudgetTooSmall {
                budget: 1,
                frames: 2
            })
        ));
        // A zero-weight frame still gets a token, taken from the largest.
        assert_eq!(
            allocate_budget(&ns(&[1.0, 0.0, 0.0]), 3).unwrap(),
            vec![1, 1, 1]
        );
        assert_eq!(allocate_budget(&ns(&[1.0, 0.0]), 10).unwrap(), vec![9, 1]);
    }

    #[test]
    fn capped_allocation_respects_cap() {
        let w = ns(&[196.0 / 300.0, 104.0 / 300.0]);
        assert_eq!(
            allocate_budget_capped(&w, 300, Some(196)).unwrap(),
            vec![196, 104]
        );
    }

    #[test]
    fn grid_examples() {
        assert_eq!(solve_grid(196).unwrap(), Grid::new(14, 14));
        assert_eq!(solve_grid(210).unwrap(), Grid::new(15, 14));
        assert_eq!(solve_grid(200).unwrap(), Grid::new(14, 14));
        assert_eq!(solve_grid(1).unwrap(), Grid::new(1, 1));
        assert_eq!(solve_grid(2).unwrap(), Grid::new(2, 1));
        assert!(matches!(solve_grid(0), Err(QuotaError::NonPositiveTarget)));
    }

    #[test]
    fn grid_within_bounds() {
        assert_eq!(solve_grid_within(196, 14, 14).unwrap(), Grid::new(14, 14));
        assert_eq!(solve_grid_within(64, 4, 16).unwrap(), Grid::new(4, 16));
        assert_eq!(solve_grid_within(30, 4, 16).unwrap(), Grid::new(3, 10));
        assert_eq!(solve_grid_within(3, 1, 8).unwrap(), Grid::new(1, 3));
    }

    #[test]
    fn redistribution_single_pass() {
        let r = redistribute_weights_traced(&ns(&[0.8, 0.2]), 300, 196).unwrap();
        let w = r.weights.as_slice();
        assert!((w[0] - 196.0 / 300.0).abs() < 1e-12);
        assert!((w[1] - (0.2 + 0.8 - 196.0 / 300.0)).abs() < 1e-12);
        assert_eq!(r.passes, 1);
    }

    #[test]
    fn redistribution_iterates_to_fixed_point() {
        let r = redistribute_weights_traced(&ns(&[0.8, 0.15, 0.05]), 290, 100).unwrap();
        let w = r.weights.as_slice();
        assert_eq!(r.passes, 2);
        assert!((w[0] - 100.0 / 290.0).abs() < 1e-12);
        assert!((w[1] - 100.0 / 290.0).abs() < 1e-12);
        assert!((w[2] - 90.0 / 290.0).abs() < 1e-12);
        for s in &r.pass_sums {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn redistribution_noop_and_infeasible() {
        let w = ns(&[0.4, 0.6]);
        assert_eq!(redistribute_weights(&w, 300, 196).unwrap(), w);
        assert!(matches!(
            redistribute_weights(&w, 400, 196),
            Err(QuotaError::InfeasibleBudget { .. })
        ));
        // Receivers with zero weight share the excess equally.
        let r = redistribute_weights(&ns(&[1.0, 0.0, 0.0]), 300, 196).unwrap();
        let w = r.as_slice();
        assert!((w[1] - w[2]).abs() < 1e-15);
        assert!((w[0] - 196.0 / 300.0).abs() < 1e-12);
    }

    #[test]
    fn plan_with_caps() {
        let (w, plan) = plan_allocation(&ns(&[0.8, 0.2]), 300, Grid::new(14, 14), true).unwrap();
        assert!((w.as_slice()[0] - 196.0 / 300.0).abs() < 1e-12);
        assert_eq!(plan.targets(), &[196, 104]);
        assert_eq!(plan.grids(), &[Grid::new(14, 14), Grid::new(10, 10)]);
        assert_eq!(plan.used(), 296);
    }

    proptest! {
        #[test]
        fn budget_safety(
            raw in proptest::collection::vec(0.0f64..1.0, 1..80),
            extra in 0usize..20_000,
        ) {
            let total: f64 = raw.iter().sum();
            let w = if total > 0.0 {
                ns(&raw.iter().map(|v| v / total).collect::<Vec<_>>())
            } else {
                NormalizedScores::uniform(raw.len()).unwrap()
            };
            let budget = raw.len() + extra;
            let targets = allocate_budget(&w, budget).unwrap();
            prop_assert!(targets.iter().all(|&t| t >= 1));
            prop_assert!(targets.iter().sum::<usize>() <= budget);
            let used: usize = targets.iter().map(|&t| solve_grid(t).unwrap().tokens()).sum();
            prop_assert!(used <= budget);
        }

        #[test]
        fn grid_shape(n in 1usize..1_000_000) {
            let g = solve_grid(n).unwrap();
            let side = n.isqrt();
            prop_assert!(g.tokens() <= n);
            prop_assert!(g.tokens() >= side * side);
            prop_assert!(g.height.abs_diff(g.width) <= 1);
        }
    }
}
