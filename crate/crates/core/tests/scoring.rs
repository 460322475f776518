use cogmap_core::map_model::{BoardGeometry, BuildingId, MapConfiguration, Orientation, Placement, Point, Slot};
use cogmap_core::scoring::{
    difference, distance, evaluate, interbuilding, number, orient, similarity, LocatedMap, MetricParams, ScoreError,
};
use proptest::prelude::*;

fn b(n: u8) -> BuildingId {
    BuildingId::new(n).unwrap()
}

fn located(items: &[(u8, f64, f64, f64)]) -> LocatedMap {
    let mut m = LocatedMap::new();
    for &(id, x, y, deg) in items {
        m.insert(b(id), Point::new(x, y), deg);
    }
    m
}

const D: f64 = 124.263;

/// Straight transcription of the formulas over plain vectors.
mod oracle {
    pub struct Item {
        pub id: u8,
        pub x: f64,
        pub y: f64,
        pub deg: f64,
    }

    fn common<'a>(m: &'a [Item], c: &'a [Item]) -> Vec<(&'a Item, &'a Item)> {
        let mut pairs = Vec::new();
        for a in m {
            for b in c {
                if a.id == b.id {
                    pairs.push((a, b));
                }
            }
        }
        pairs
    }

    fn odiff(a: f64, b: f64) -> f64 {
        let d = (a - b).abs() % 360.0;
        d.min(360.0 - d)
    }

    pub fn all(m: &[Item], c: &[Item], d_max: f64, m_max: f64) -> [f64; 6] {
        let only_m = m.iter().filter(|a| !c.iter().any(|b| b.id == a.id)).count() as f64;
        let only_c = c.iter().filter(|a| !m.iter().any(|b| b.id == a.id)).count() as f64;
        let number = 1.0 - ((m.len() as f64) - (c.len() as f64)).abs() / m.len() as f64;
        let difference = 1.0 - (only_m + only_c) / (m.len() + c.len()) as f64;
        let pairs = common(m, c);
        let mut dist_sum = 0.0;
        let mut orient_sum = 0.0;
        for (a, b) in &pairs {
            dist_sum += ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt() / d_max;
            orient_sum += odiff(a.deg, b.deg) / 180.0;
        }
        let mut inter_sum = 0.0;
        for (mi, ci) in &pairs {
            for (mj, cj) in &pairs {
                let dm = ((mi.x - mj.x).powi(2) + (mi.y - mj.y).powi(2)).sqrt();
                let dc = ((ci.x - cj.x).powi(2) + (ci.y - cj.y).powi(2)).sqrt();
                inter_sum += (dm - dc).abs() / d_max;
            }
        }
        let distance = 1.0 - dist_sum / m_max;
        let orient = 1.0 - orient_sum / m_max;
        let interbuilding = 1.0 - inter_sum / (m_max * m_max);
        [number, difference, distance, orient, interbuilding, difference * distance * orient]
    }
}

#[test]
fn number_examples() {
    let four = located(&[(1, 0., 0., 0.), (2, 1., 0., 0.), (3, 2., 0., 0.), (4, 3., 0., 0.)]);
    let three = located(&[(1, 0., 0., 0.), (2, 1., 0., 0.), (5, 2., 0., 0.)]);
    let five = located(&[(1, 0., 0., 0.), (2, 1., 0., 0.), (3, 2., 0., 0.), (4, 3., 0., 0.), (5, 4., 0., 0.)]);
    let two = located(&[(1, 0., 0., 0.), (2, 1., 0., 0.)]);
    assert_eq!(number(&four, &four).unwrap(), 1.0);
    assert_eq!(number(&four, &three).unwrap(), 0.75);
    assert_eq!(number(&two, &five).unwrap(), -0.5);
    assert!(matches!(number(&LocatedMap::new(), &two), Err(ScoreError::EmptyTarget)));
}

#[test]
fn difference_examples() {
    let m = located(&[(1, 0., 0., 0.), (2, 1., 0., 0.), (3, 2., 0., 0.), (4, 3., 0., 0.)]);
    let c = located(&[(1, 0., 0., 0.), (2, 1., 0., 0.), (5, 2., 0., 0.)]);
    assert!((difference(&m, &c).unwrap() - (1.0 - 3.0 / 7.0)).abs() < 1e-15);
    assert!((difference(&m, &c).unwrap() - 0.5714).abs() < 1e-4);
    let p = located(&[(1, 0., 0., 0.), (2, 0., 0., 0.)]);
    let q = located(&[(3, 0., 0., 0.), (4, 0., 0., 0.)]);
    assert_eq!(difference(&p, &q).unwrap(), 0.0);
    assert!(matches!(difference(&LocatedMap::new(), &LocatedMap::new()), Err(ScoreError::EmptyMaps)));
}

#[test]
fn distance_examples() {
    let params = MetricParams::new(D, 2).unwrap();
    let m = located(&[(1, 10., 10., 0.), (2, 50., 30., 0.)]);
    let c = located(&[(1, 10., 10., 0.), (2, 50., 40., 0.)]);
    let v = distance(&m, &c, &params);
    assert!((v - (1.0 - (10.0 / D) / 2.0)).abs() < 1e-15);
    assert!((v - 0.9598).abs() < 1e-4);
    assert_eq!(distance(&m, &m, &params), 1.0);
    assert_eq!(distance(&m, &located(&[(3, 0., 0., 0.)]), &params), 1.0);
}

#[test]
fn orient_examples() {
    let m = located(&[(1, 0., 0., 0.), (2, 1., 1., 90.)]);
    let c = located(&[(1, 0., 0., 0.), (2, 1., 1., 180.)]);
    assert_eq!(orient(&m, &c, &MetricParams::new(D, 2).unwrap()), 0.75);
    let one = MetricParams::new(D, 1).unwrap();
    assert_eq!(orient(&located(&[(1, 0., 0., 0.)]), &located(&[(1, 0., 0., 180.)]), &one), 0.0);
}

#[test]
fn interbuilding_examples() {
    let params = MetricParams::new(D, 2).unwrap();
    // 20/40 and 30/40 legs: 44.721 and 50.0 apart.
    let m = located(&[(1, 0., 0., 0.), (2, 20., 40., 0.)]);
    let c = located(&[(1, 0., 0., 0.), (2, 30., 40., 0.)]);
    let gap = 50.0 - 2000f64.sqrt();
    let v = interbuilding(&m, &c, &params);
    assert!((v - (1.0 - (2.0 * gap / D) / 4.0)).abs() < 1e-15);
    assert!((v - 0.9788).abs() < 1e-4);
    let shifted = c.map_positions(|p| Point::new(p.x + 7.0, p.y - 3.0));
    assert!((interbuilding(&c, &shifted, &params) - 1.0).abs() < 1e-12);
}

#[test]
fn similarity_examples() {
    let params = MetricParams::new(D, 8).unwrap();
    let m = located(&[(1, 5., 5., 0.), (2, 15., 5., 90.), (3, 25., 5., 180.), (4, 35., 5., 270.)]);
    let c = located(&[(1, 5., 5., 0.), (2, 15., 5., 90.), (5, 60., 60., 0.)]);
    assert_eq!(similarity(&m, &m, &params).unwrap(), 1.0);
    assert_eq!(similarity(&m, &LocatedMap::new(), &params).unwrap(), 0.0);
    assert!((similarity(&m, &c, &params).unwrap() - 0.5714).abs() < 1e-4);
}

#[test]
fn evaluate_checks_m_max() {
    let m = located(&[(1, 0., 0., 0.), (2, 1., 0., 0.), (3, 2., 0., 0.)]);
    assert!(matches!(evaluate(&m, &m, &MetricParams::new(D, 2).unwrap()), Err(ScoreError::MMaxTooSmall { .. })));
    assert!(MetricParams::new(0.0, 2).is_err());
    assert!(MetricParams::new(D, 0).is_err());
}

fn geometry() -> BoardGeometry {
    BoardGeometry::default()
}

fn arb_config(max: usize) -> impl Strategy<Value = MapConfiguration> {
    let slots: Vec<Slot> = geometry().buildable_slots().collect();
    let n_slots = slots.len();
    (
        Just(slots),
        proptest::sample::subsequence((1u8..=10).collect::<Vec<_>>(), 0..=max),
        proptest::collection::vec((0..n_slots, 0usize..4), max),
    )
        .prop_map(|(slots, ids, picks)| {
            let g = geometry();
            let mut used = std::collections::BTreeSet::new();
            let mut placements = Vec::new();
            for (id, (mut s, o)) in ids.into_iter().zip(picks) {
                while !used.insert(s) {
                    s = (s + 1) % slots.len();
                }
                placements.push(Placement::new(b(id), slots[s], Orientation::ALL[o]));
            }
            MapConfiguration::from_placements(placements, &g).unwrap()
        })
}

fn to_oracle(config: &MapConfiguration) -> Vec<oracle::Item> {
    let l = LocatedMap::from_configuration(config, &geometry()).unwrap();
    l.iter()
        .map(|(id, lb)| oracle::Item { id: id.number(), x: lb.position.x, y: lb.position.y, deg: lb.orientation_deg })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn matches_oracle(m in arb_config(8), c in arb_config(8)) {
        prop_assume!(!m.is_empty());
        let g = geometry();
        let params = MetricParams::for_board(&g, 8).unwrap();
        let s = evaluate(
            &LocatedMap::from_configuration(&m, &g).unwrap(),
            &LocatedMap::from_configuration(&c, &g).unwrap(),
            &params,
        ).unwrap();
        let expected = oracle::all(&to_oracle(&m), &to_oracle(&c), g.diagonal(), 8.0);
        let got = [s.number.unwrap(), s.difference, s.distance, s.orient, s.interbuilding, s.similarity];
        for (g, e) in got.iter().zip(expected) {
            prop_assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0), "{g} vs {e}");
        }
    }

    #[test]
    fn range_and_symmetry(m in arb_config(8), c in arb_config(8)) {
        prop_assume!(!m.is_empty() && !c.is_empty());
        let g = geometry();
        let params = MetricParams::for_board(&g, 8).unwrap();
        let lm = LocatedMap::from_configuration(&m, &g).unwrap();
        let lc = LocatedMap::from_configuration(&c, &g).unwrap();
        let fwd = evaluate(&lm, &lc, &params).unwrap();
        let back = evaluate(&lc, &lm, &params).unwrap();
        for v in [fwd.difference, fwd.distance, fwd.orient, fwd.interbuilding, fwd.similarity] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(fwd.number.unwrap() <= 1.0);
        prop_assert_eq!(fwd.difference, back.difference);
        prop_assert!((fwd.distance - back.distance).abs() < 1e-12);
        prop_assert!((fwd.orient - back.orient).abs() < 1e-12);
        prop_assert!((fwd.interbuilding - back.interbuilding).abs() < 1e-12);
    }

    #[test]
    fn identity(m in arb_config(8)) {
        prop_assume!(!m.is_empty());
        let g = geometry();
        let lm = LocatedMap::from_configuration(&m, &g).unwrap();
        let s = evaluate(&lm, &lm, &MetricParams::for_board(&g, 8).unwrap()).unwrap();
        prop_assert_eq!([s.number.unwrap(), s.difference, s.distance, s.orient, s.interbuilding, s.similarity], [1.0; 6]);
    }

    #[test]
    fn translation_invariance(m in arb_config(8), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let g = geometry();
        let params = MetricParams::for_board(&g, 8).unwrap();
        let lm = LocatedMap::from_configuration(&m, &g).unwrap();
        let moved = lm.map_positions(|p| Point::new(p.x + dx, p.y + dy));
        prop_assert!((interbuilding(&lm, &moved, &params) - 1.0).abs() <= 1e-9);
    }
}
