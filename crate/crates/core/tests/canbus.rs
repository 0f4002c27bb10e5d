use drivauth::attacks::{smart_replay_merge, ModifiableMask};
use drivauth::canbus::{
    arbitrate, reconstruct_samples, run_drive, AttackerTap, Bus, CanFrame, DriveSetup, Forgery,
    SignalMap, Writer, DEFAULT_GUARD_US, SECOND_US,
};
use drivauth::dataio::{default_feature_names, Batch, SafetyClass, SafetyTaxonomy};
use drivauth::rng::seeded;
use drivauth::Error;
use proptest::prelude::*;
use rand::Rng;

fn setup(enforce: bool) -> DriveSetup {
    DriveSetup {
        features: default_feature_names(),
        map: SignalMap::default_ocslab(),
        taxonomy: SafetyTaxonomy::default_ocslab(),
        enforce_safety: enforce,
        sniff: true,
    }
}

fn timeline(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| (0..46).map(|_| rng.random()).collect())
        .collect()
}

#[test]
fn exhaustive_small_sets_match_a_sorting_oracle() {
    // All id assignments from a 3-value alphabet for up to 4 frames, with
    // ties broken by emit time and then signal name.
    let ids = [0x10u32, 0x20, 0x7ff];
    for n in 1..=4usize {
        for code in 0..3usize.pow(n as u32) {
            let frames: Vec<CanFrame> = (0..n)
                .map(|i| {
                    let id = ids[(code / 3usize.pow(i as u32)) % 3];
                    CanFrame::new(
                        id,
                        &format!("s{}", n - i),
                        i as f64,
                        (i % 2) as u64,
                        Writer::Legit,
                    )
                    .unwrap()
                })
                .collect();
            let mut sorted = frames.clone();
            sorted.sort_by(|a, b| {
                (a.id, a.emit_time_us, a.signal.as_str()).cmp(&(
                    b.id,
                    b.emit_time_us,
                    b.signal.as_str(),
                ))
            });
            assert_eq!(arbitrate(&frames), Some(&sorted[0]));
        }
    }
    assert_eq!(arbitrate(&[]), None);
}

#[test]
fn injected_frames_land_before_the_sampling_tick() {
    let s = setup(true);
    let mut bus = Bus::new();
    let tap = bus.attach_tap(AttackerTap::new(s.taxonomy.clone(), true));
    let signal = "Fuel consumption";
    assert_eq!(s.taxonomy.class_of(signal), Some(SafetyClass::Modifiable));
    bus.enqueue(
        CanFrame::new(
            s.map.id_of(signal).unwrap() as u32,
            signal,
            1.0,
            10_000,
            Writer::Legit,
        )
        .unwrap(),
    )
    .unwrap();
    bus.inject(tap, &s.map, signal, 7.0, SECOND_US).unwrap();
    let delivered = bus.step(SECOND_US).unwrap();
    assert_eq!(delivered.len(), 2);
    assert_eq!(delivered[1].emit_time_us, SECOND_US - DEFAULT_GUARD_US);
    assert_eq!(
        bus.state().get(signal).map(|x| (x.0, x.1)),
        Some((7.0, Writer::Attacker))
    );
    assert!(matches!(
        bus.step(SECOND_US - 1),
        Err(Error::TimeRegression { .. })
    ));
}

#[test]
fn full_forgery_is_allowed_only_without_enforcement() {
    let legit = timeline(1, 3);
    let forged = timeline(2, 3);
    let all: Vec<usize> = (0..46).collect();
    let f = Some(Forgery {
        rows: &forged,
        columns: &all,
    });
    assert!(matches!(
        run_drive(&setup(true), &legit, f),
        Err(Error::SafetyViolation { .. })
    ));
    let rec = run_drive(&setup(false), &legit, f).unwrap();
    assert_eq!(rec.samples, forged);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn replay_is_exact_deterministic_and_recoverable_from_the_sniff_log(seed in any::<u64>(), n in 1usize..30) {
        let legit = timeline(seed, n);
        let a = run_drive(&setup(true), &legit, None).unwrap();
        let b = run_drive(&setup(true), &legit, None).unwrap();
        prop_assert_eq!(&a.samples, &legit);
        prop_assert_eq!(&a.sniff_log, &b.sniff_log);
        prop_assert_eq!(reconstruct_samples(&a.sniff_log, &setup(true).features), legit);
    }

    #[test]
    fn bus_forgery_matches_the_offline_merge(seed in any::<u64>()) {
        let s = setup(true);
        let mask = ModifiableMask::new(&s.taxonomy, &s.features).unwrap();
        let attacker = Batch::from_timeline(0, 0, &timeline(seed, 40), 16, 8, 4).unwrap();
        let victim = Batch::from_timeline(1, 0, &timeline(seed ^ 7, 40), 16, 8, 4).unwrap();
        let merged = smart_replay_merge(&attacker, &victim, &mask).unwrap();
        let rec = run_drive(
            &s,
            &attacker.timeline(),
            Some(Forgery { rows: &victim.timeline(), columns: &mask.columns }),
        )
        .unwrap();
        prop_assert_eq!(rec.samples, merged.timeline());
        let unsafe_frames = rec
            .sniff_log
            .iter()
            .filter(|f| f.writer == Writer::Attacker)
            .filter(|f| s.taxonomy.class_of(&f.signal) != Some(SafetyClass::Modifiable))
            .count();
        prop_assert_eq!(unsafe_frames, 0);
    }

    #[test]
    fn arbitration_picks_the_minimum_key(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = seeded(seed);
        let frames: Vec<CanFrame> = (0..n)
            .map(|i| CanFrame::new(rng.random_range(0..2048), &format!("x{i}"), 0.0, rng.random_range(0..3), Writer::Legit).unwrap())
            .collect();
        let w = arbitrate(&frames).unwrap();
        prop_assert!(frames.iter().all(|f| w.priority_key() <= f.priority_key()));
    }
}
