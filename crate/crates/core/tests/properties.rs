use eosnet::filter::{init_bank, FilterSettings, UpdateContext};
use eosnet::fusion::{merge_field, ClockModel, ClockTable, EventRecord, ReceivedRecord};
use eosnet::geodesy::{ecef_to_geodetic, geodetic_to_ecef, EllipsoidModel, Environment, GeodeticCoord};
use eosnet::optimizer::Bounds;
use eosnet::scene::{
    CarrierMode, CarrierModeCatalog, KinematicBounds, MotionModel, ObjectClass, ObjectClassCatalog, ObjectState,
    TacticProfile,
};
use eosnet::sensor::{
    assemble_observation_set, build_tiling, direction_to_pixel, pixel_to_direction, LayoutId, Measurement,
    ObservationConditions,
};
use nalgebra::Vector3;
use proptest::prelude::*;

fn unit(x: f64, y: f64, z: f64) -> Option<Vector3<f64>> {
    let v = Vector3::new(x, y, z);
    (v.norm() > 1e-3).then(|| v.normalize())
}

fn measurement(carrier: u32, t: f64, los: Vector3<f64>, position: Vector3<f64>) -> Measurement {
    Measurement {
        time_s: t,
        carrier_id: carrier,
        carrier_position_m: position,
        los,
        carrier_mode: 1,
        conditions: ObservationConditions::default(),
        tactical_tags: vec![],
        tile_id: None,
        pixel: None,
    }
}

fn catalog() -> ObjectClassCatalog {
    let state = |id, motion| ObjectState {
        id,
        name: String::new(),
        motion,
        bounds: KinematicBounds::unbounded(),
        tactic: TacticProfile::default(),
    };
    ObjectClassCatalog::new(vec![
        ObjectClass { id: 1, name: "cv".into(), states: vec![state(1, MotionModel::constant_velocity(0.1))] },
        ObjectClass {
            id: 2,
            name: "ca".into(),
            states: vec![state(1, MotionModel::constant_acceleration(0.1)), state(2, MotionModel::coordinated_turn(0.05, Vector3::z(), 0.1))],
        },
    ])
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn geodetic_round_trip(lat in -90.0f64..=90.0, lon in -180.0f64..180.0, h in -1_000.0f64..100_000.0) {
        let e = EllipsoidModel::WGS84;
        let g = GeodeticCoord::from_degrees(h, lat, lon).unwrap();
        let r = geodetic_to_ecef(&g, &e);
        let back = ecef_to_geodetic(&r, &e).unwrap();
        prop_assert!((geodetic_to_ecef(&back, &e) - r).norm() < 1e-6);
        prop_assert!((back.altitude_m - h).abs() < 1e-6);
    }

    #[test]
    fn pixel_round_trip(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, cube24 in any::<bool>()) {
        let Some(d) = unit(x, y, z) else { return Ok(()) };
        let array = build_tiling(if cube24 { LayoutId::Cube24 } else { LayoutId::Cube6 });
        let mut seen = false;
        for tile in &array.tiles {
            if let Some(p) = direction_to_pixel(tile, &d).unwrap() {
                seen = true;
                let back = pixel_to_direction(tile, &p).unwrap();
                prop_assert!((back - d).norm() < 1e-12, "tile {} error {}", tile.id, (back - d).norm());
            }
        }
        prop_assert!(seen);
    }

    #[test]
    fn bank_weights_stay_normalized(
        seed_dirs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.2f64..1.0), 3..8),
    ) {
        let los: Vec<Vector3<f64>> = seed_dirs.iter().filter_map(|(x, y, z)| unit(*x, *y, *z)).collect();
        prop_assume!(los.len() >= 3);
        let ms: Vec<Measurement> = los
            .iter()
            .enumerate()
            .map(|(k, d)| measurement(1 + (k as u32 % 2), 0.1 * k as f64, *d, Vector3::new(500.0 * (k % 2) as f64, 0.0, 6.4e6)))
            .collect();
        let obs = assemble_observation_set(ms, None).unwrap();
        let modes = CarrierModeCatalog {
            modes: vec![CarrierMode { id: 1, bearing_std_rad: 1e-3, frame_rate_hz: 10.0, detection_range_min_m: 1e3, detection_range_max_m: 3e4 }],
        };
        let settings = FilterSettings::default();
        let env = Environment::default();
        let ctx = UpdateContext { carrier_modes: &modes, environment: &env, constraints: &[], settings: &settings };
        let mut bank = init_bank(&catalog(), &obs, &modes, &settings).unwrap();
        for m in obs.measurements() {
            bank.update(m, &ctx).unwrap();
            let total: f64 = bank.weights().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12, "total {total}");
            let classes: f64 = bank.class_posterior().iter().map(|c| c.1).sum();
            prop_assert!((classes - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_ignores_arrival_order(
        events in proptest::collection::vec((1u32..4, 0.0f64..10.0, 0.0f64..1.0), 1..30),
        perm_seed in any::<u64>(),
    ) {
        let mut seq = [0u64; 4];
        let records: Vec<ReceivedRecord> = events
            .iter()
            .enumerate()
            .map(|(i, (src, t, delay))| {
                let s = seq[*src as usize];
                seq[*src as usize] += 1;
                ReceivedRecord {
                    record: EventRecord {
                        sequence: i as u64,
                        source_id: *src,
                        source_seq: s,
                        emission_time_s: *t,
                        measurement: measurement(*src, *t, Vector3::x(), Vector3::zeros()),
                    },
                    arrival_time_s: t + delay,
                }
            })
            .collect();
        // duplicates of a few records must collapse
        let mut shuffled: Vec<ReceivedRecord> = records.iter().chain(records.iter().take(3)).cloned().collect();
        let mut state = perm_seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let clocks = ClockTable { clocks: vec![ClockModel { carrier_id: 2, offset_s: 0.5, drift: 1e-5 }] };
        let declared = [1, 2, 3];
        let a = merge_field(1, &records, &clocks, &declared).unwrap();
        let b = merge_field(1, &shuffled, &clocks, &declared).unwrap();
        prop_assert_eq!(a.len(), records.len());
        let key = |f: &eosnet::fusion::EventField| -> Vec<(u32, u64, u64)> {
            f.entries.iter().map(|e| (e.record.source_id, e.record.source_seq, e.event_time_s.to_bits())).collect()
        };
        prop_assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn reflection_stays_in_bounds(lo in -100.0f64..100.0, width in 0.0f64..50.0, v in -1e6f64..1e6) {
        let b = Bounds::continuous(vec![lo], vec![lo + width]);
        let r = b.reflect(0, v);
        prop_assert!(r >= lo && r <= lo + width, "{r} outside [{lo}, {}]", lo + width);
    }
}
