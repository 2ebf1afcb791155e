//! Metrics with paired bootstrap intervals, McNemar, and Moran's I on a
//! clustered grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streetview_occupancy::decision::OccupancyLabel::{self, NotOccupied, Occupied};
use streetview_occupancy::geodesy::PlanePoint;
use streetview_occupancy::stats::{
    confusion, discordant_counts, knn_weights, mcnemar_auto, metrics, morans_i, morans_i_analytic, paired_bootstrap, Metric,
    PairedLabel,
};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<PairedLabel> = (0..240)
        .map(|_| {
            let gt = if rng.gen_bool(0.25) { NotOccupied } else { Occupied };
            let noisy = |rng: &mut ChaCha8Rng, p: f64| if rng.gen_bool(p) { gt } else { gt.flipped() };
            PairedLabel { gt, one: noisy(&mut rng, 0.86), two: noisy(&mut rng, 0.9) }
        })
        .collect();
    let col = |f: fn(&PairedLabel) -> OccupancyLabel| pairs.iter().map(f).collect::<Vec<_>>();
    let (gts, ones, twos) = (col(|p| p.gt), col(|p| p.one), col(|p| p.two));

    let report = paired_bootstrap(&pairs, 2000, 42).unwrap();
    let two_stage = metrics(&confusion(&twos, &gts).unwrap());
    for m in Metric::ALL {
        let b = &report.metrics[&m];
        println!(
            "{:<9} two-stage {:.3} [{:.3}, {:.3}]  delta {:+.3}",
            m.as_str(),
            two_stage.get(m).unwrap(),
            b.two_stage.ci_low.unwrap(),
            b.two_stage.ci_high.unwrap(),
            b.delta.point.unwrap()
        );
    }
    let (b, c) = discordant_counts(&gts, &ones, &twos).unwrap();
    let t = mcnemar_auto(b, c, false);
    println!("McNemar b={b} c={c} statistic {:.3} p {:.3} ({:?})", t.statistic, t.p_value, t.method);

    // Two neighborhoods with different damage rates.
    let pts: Vec<PlanePoint> = (0..100).map(|i| PlanePoint::new((i % 10) as f64 * 20.0, (i / 10) as f64 * 20.0).unwrap()).collect();
    let values: Vec<f64> = (0..100).map(|i| f64::from(rng.gen_bool(if i % 10 < 5 { 0.7 } else { 0.1 }))).collect();
    let w = knn_weights(&pts, 8).unwrap();
    let perm = morans_i(&values, &w, 999, 7).unwrap();
    let analytic = morans_i_analytic(&values, &w).unwrap();
    println!("Moran I {:.3} (E {:.4}) permutation p {:.3}, analytic z {:.2}", perm.i, perm.expected_i, perm.p_value, analytic.z.unwrap());
}
