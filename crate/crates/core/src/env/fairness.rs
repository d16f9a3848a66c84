//! Max-min fair rate allocation by progressive filling.

/// Relative slack under which a link counts as saturated.
const SATURATION_EPS: f64 = 1e-12;

/// Max-min fair rates for `demands.len()` flows, flow `f` crossing the links
/// listed in `routes[f]`.
///
/// All unfrozen flows grow at the same rate. A flow freezes when it reaches
/// its demand or when one of its links saturates. When no link is overloaded
/// by the offered demands, the demands are returned unchanged.
pub fn max_min_fair(capacities: &[f64], demands: &[f64], routes: &[&[usize]]) -> Vec<f64> {
    assert_eq!(demands.len(), routes.len(), "one route per flow");
    let n_links = capacities.len();

    let mut offered = vec![0.0; n_links];
    for (f, route) in routes.iter().enumerate() {
        for &e in *route {
            offered[e] += demands[f];
        }
    }
    if offered.iter().zip(capacities).all(|(l, c)| l / c <= 1.0) {
        return demands.to_vec();
    }

    let mut rate = vec![0.0; demands.len()];
    let mut frozen: Vec<bool> = demands.iter().map(|&d| d <= 0.0).collect();
    let mut active = vec![0usize; n_links];
    let mut used = vec![0.0; n_links];

    while frozen.iter().any(|f| !f) {
        active.iter_mut().for_each(|a| *a = 0);
        used.iter_mut().for_each(|u| *u = 0.0);
        for (f, route) in routes.iter().enumerate() {
            for &e in *route {
                used[e] += rate[f];
                if !frozen[f] {
                    active[e] += 1;
                }
            }
        }

        let mut inc = f64::INFINITY;
        for e in 0..n_links {
            if active[e] > 0 {
                inc = inc.min(((capacities[e] - used[e]) / active[e] as f64).max(0.0));
            }
        }
        for f in 0..demands.len() {
            if !frozen[f] {
                inc = inc.min(demands[f] - rate[f]);
            }
        }

        let saturated: Vec<bool> = (0..n_links)
            .map(|e| {
                active[e] > 0 && {
                    let share = ((capacities[e] - used[e]) / active[e] as f64).max(0.0);
                    share <= inc + SATURATION_EPS * capacities[e]
                }
            })
            .collect();

        for f in 0..demands.len() {
            if frozen[f] {
                continue;
            }
            if demands[f] - rate[f] <= inc {
                rate[f] = demands[f];
                frozen[f] = true;
            } else {
                rate[f] += inc;
                if routes[f].iter().any(|&e| saturated[e]) {
                    frozen[f] = true;
                }
            }
        }
    }
    rate
}
