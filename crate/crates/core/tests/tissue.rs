use proptest::prelude::*;
use vbmkit::tissue::{
    dice_foreground, dice_score, gm_mask_redistribute, multilevel_activation, multilevel_activation_increment,
    probabilities_to_tissue,
    tissue_to_probabilities, ActivationParams, DiceSummary, ProbabilityMaps, TissueMap,
};
use vbmkit::volume::{Grid, Volume3D};
use vbmkit::Error;

fn line(values: &[f64]) -> Volume3D {
    Volume3D::new(Grid::unit([values.len(), 1, 1]), values.to_vec()).unwrap()
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// The staircase summed term by term: unit step at 0, half steps above.
fn staircase(x: f64, alpha: f64) -> f64 {
    sigmoid(alpha * x) + [1.5, 2.0, 2.5, 3.0].iter().map(|c| 0.5 * sigmoid(alpha * (x - c))).sum::<f64>()
}

#[test]
fn activation_examples() {
    let p = ActivationParams::new(100.0).unwrap();
    assert!(multilevel_activation(-10.0, p).abs() < 1e-6);
    assert!((multilevel_activation(10.0, p) - 3.0).abs() < 1e-6);
    for x in [1.75, 0.0] {
        assert!((multilevel_activation(x, p) - staircase(x, 100.0)).abs() < 1e-3);
    }
    assert!((multilevel_activation(0.0, p) - 0.5).abs() < 1e-3);
}

#[test]
fn probability_examples() {
    let p = tissue_to_probabilities(&TissueMap::new(line(&[2.4, 3.0, 0.5])).unwrap());
    assert!((p.gm.data()[0] - 0.6).abs() < 1e-12 && (p.wm.data()[0] - 0.4).abs() < 1e-12);
    assert_eq!((p.csf.data()[1], p.gm.data()[1], p.wm.data()[1]), (0.0, 0.0, 1.0));
    assert_eq!((p.csf.data()[2], p.gm.data()[2], p.wm.data()[2]), (0.5, 0.0, 0.0));

    let maps = ProbabilityMaps::new(line(&[0.0, 1.0]), line(&[0.6, 0.0]), line(&[0.4, 0.0])).unwrap();
    let t = probabilities_to_tissue(&maps).unwrap();
    assert!((t.volume().data()[0] - 2.4).abs() < 1e-12);
    assert_eq!(t.volume().data()[1], 1.0);

    let bad = ProbabilityMaps::new(line(&[0.5]), line(&[0.0]), line(&[0.5])).unwrap();
    assert!(matches!(probabilities_to_tissue(&bad), Err(Error::NonAdjacentMixture { .. })));
}

#[test]
fn redistribution_examples() {
    let p = ProbabilityMaps::new(line(&[0.1, 0.3]), line(&[0.6, 0.0]), line(&[0.3, 0.2])).unwrap();
    let r = gm_mask_redistribute(&p, &line(&[1.0, 1.0])).unwrap();
    assert!((r.csf.data()[0] - 0.4).abs() < 1e-12);
    assert_eq!(r.gm.data()[0], 0.0);
    assert!((r.wm.data()[0] - 0.6).abs() < 1e-12);
    assert_eq!((r.csf.data()[1], r.gm.data()[1], r.wm.data()[1]), (0.3, 0.0, 0.2));
    let same = gm_mask_redistribute(&p, &line(&[0.0, 0.0])).unwrap();
    assert_eq!(same, p);
}

#[test]
fn dice_examples() {
    let g = Grid::unit([8, 8, 8]);
    let set = |idx: &[usize]| {
        let mut d = vec![0.0; g.len()];
        for &i in idx {
            d[i] = 2.0;
        }
        Volume3D::new(g.clone(), d).unwrap()
    };
    let a = set(&[0, 9, 100, 511]);
    assert_eq!(dice_score(&a, &a, 2).unwrap(), 1.0);
    assert_eq!(dice_score(&a, &set(&[1, 2, 3, 4]), 2).unwrap(), 0.0);
    assert_eq!(dice_score(&a, &set(&[0, 9, 5, 6]), 2).unwrap(), 0.5);

    let m = TissueMap::new(line(&[0.0, 1.0, 2.0, 3.0, 2.2])).unwrap();
    let s = dice_foreground(&m, &m).unwrap();
    assert_eq!((s.csf, s.gm, s.wm, s.foreground, s.gwm_mean), (1.0, 1.0, 1.0, 1.0, 1.0));
    assert!((DiceSummary::from_classes(0.8, 0.9, 1.0).foreground - 0.9).abs() < 1e-12);
    assert!((DiceSummary::from_classes(1.0, 0.9, 0.7).gwm_mean - 0.8).abs() < 1e-12);
}

fn simplex() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b, c)| (a, (1.0 - a) * b, (1.0 - a) * (1.0 - b) * c))
}

proptest! {
    #[test]
    fn activation_is_monotone(x in -2.0f64..5.0, dx in 1e-4f64..0.5, alpha in 1.0f64..120.0) {
        let p = ActivationParams::new(alpha).unwrap();
        prop_assert!(multilevel_activation_increment(x, x + dx, p) > 0.0);
        prop_assert!(multilevel_activation(x + dx, p) >= multilevel_activation(x, p));
    }

    #[test]
    fn tissue_round_trip(ts in proptest::collection::vec(0.0f64..=3.0, 1..64)) {
        let back = probabilities_to_tissue(&tissue_to_probabilities(&TissueMap::new(line(&ts)).unwrap())).unwrap();
        for (a, b) in back.volume().data().iter().zip(&ts) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn redistribution_keeps_sums(v in proptest::collection::vec((simplex(), any::<bool>()), 1..64)) {
        let (csf, gm, wm): (Vec<f64>, Vec<f64>, Vec<f64>) =
            (v.iter().map(|x| x.0 .0).collect(), v.iter().map(|x| x.0 .1).collect(), v.iter().map(|x| x.0 .2).collect());
        let mask: Vec<f64> = v.iter().map(|x| f64::from(u8::from(x.1))).collect();
        let p = ProbabilityMaps::new(line(&csf), line(&gm), line(&wm)).unwrap();
        let r = gm_mask_redistribute(&p, &line(&mask)).unwrap();
        for i in 0..v.len() {
            let (c, g, w) = (r.csf.data()[i], r.gm.data()[i], r.wm.data()[i]);
            prop_assert!(c >= 0.0 && g >= 0.0 && w >= 0.0);
            prop_assert!((c + g + w - (csf[i] + gm[i] + wm[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn dice_symmetric_and_permutation_invariant(
        a in proptest::collection::vec(0u8..4, 64),
        b in proptest::collection::vec(0u8..4, 64),
        perm in Just((0..64usize).collect::<Vec<_>>()).prop_shuffle(),
        label in 0u8..4,
    ) {
        let vol = |d: &[u8]| Volume3D::new(Grid::unit([4, 4, 4]), d.iter().map(|&l| f64::from(l)).collect()).unwrap();
        let (va, vb) = (vol(&a), vol(&b));
        let d = dice_score(&va, &vb, label).unwrap();
        prop_assert_eq!(d, dice_score(&vb, &va, label).unwrap());
        let pa: Vec<u8> = perm.iter().map(|&i| a[i]).collect();
        let pb: Vec<u8> = perm.iter().map(|&i| b[i]).collect();
        prop_assert_eq!(d, dice_score(&vol(&pa), &vol(&pb), label).unwrap());
    }
}
