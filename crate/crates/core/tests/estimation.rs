use eosnet::filter::{
    task_class_report, Endpoint, EstimateSet, FilterSettings, GridEstimate, GridRegime, HypothesisPosterior,
    HypothesisSnapshot, ReportContext, TerminalPredicate,
};
use eosnet::fusion::{
    run_group_scenario, CarrierSetup, FrameSpec, GridSpec, GroupScenario, LinkModel, Origin, TargetSpec,
};
use eosnet::geodesy::{geodetic_to_ecef, local_enu_frame, EllipsoidModel, Environment, GeodeticCoord};
use eosnet::scene::{
    CarrierMode, CarrierModeCatalog, KinematicBounds, KinematicState, MotionModel, ObjectClass, ObjectClassCatalog,
    ObjectState, ScheduledState, StateMatrix, TacticProfile,
};
use eosnet::sensor::{LayoutId, MeasurementNoise};
use nalgebra::Vector3;

fn cv_only_scenario(grid: GridSpec) -> GroupScenario {
    GroupScenario {
        origin: Origin { latitude_deg: 30.0, longitude_deg: -20.0, altitude_m: 0.0 },
        environment: Environment::default(),
        catalog: ObjectClassCatalog::new(vec![ObjectClass {
            id: 1,
            name: "cv".into(),
            states: vec![ObjectState {
                id: 1,
                name: "cruise".into(),
                motion: MotionModel::constant_velocity(0.01),
                bounds: KinematicBounds::unbounded(),
                tactic: TacticProfile::default(),
            }],
        }])
        .unwrap(),
        carrier_modes: CarrierModeCatalog {
            modes: vec![CarrierMode {
                id: 1,
                bearing_std_rad: 5e-4,
                frame_rate_hz: 10.0,
                detection_range_min_m: 2e3,
                detection_range_max_m: 40e3,
            }],
        },
        carriers: CarrierSetup::Formation {
            center_enu_m: Vector3::new(0.0, 0.0, 500.0),
            baseline_m: 3000.0,
            axis_enu: Vector3::x(),
            count: 2,
            velocity_enu_mps: Vector3::new(0.0, 50.0, 0.0),
            mode: 1,
        },
        layout: LayoutId::Cube24,
        noise: MeasurementNoise { position_std_m: 0.0, bearing_std_rad: 5e-4, quantize: false },
        link: LinkModel::default(),
        clocks: vec![],
        target: TargetSpec {
            class_id: 1,
            schedule: vec![ScheduledState { state_id: 1, start_time_s: 0.0 }],
            position_enu_m: Vector3::new(2000.0, 12_000.0, 2000.0),
            velocity_enu_mps: Vector3::new(-150.0, 20.0, 0.0),
            acceleration_enu_mps2: Vector3::zeros(),
        },
        frames: FrameSpec { start_s: 0.0, count: 30, rate_hz: 10.0 },
        grid,
        filter: FilterSettings::default(),
        constraints: vec![],
        fusion_nodes: Some(vec![1]),
        fusion_cutoff_s: None,
        convergence_relative_error: 0.05,
    }
}

#[test]
fn extrapolated_grid_points_apply_the_transition_exactly() {
    let times = vec![-3.0, -0.5, 0.0, 1.0, 2.9, 4.0, 10.0];
    let s = cv_only_scenario(GridSpec::Times { times_s: times.clone() });
    let o = run_group_scenario(&s, 5).unwrap();
    let est = &o.nodes[0].estimate;
    assert_eq!(est.regime, GridRegime::Mixed);
    let (t0, t1) = est.observation_span;
    let (first, last) = (&est.first_snapshot[0], &est.last_snapshot[0]);
    for e in &est.estimates {
        let snap = if e.time_s < t0 {
            first
        } else if e.time_s > t1 {
            last
        } else {
            continue;
        };
        let expected = snap.motion.transition(e.time_s - snap.time_s) * snap.mean;
        assert_eq!(e.state.to_vector(), expected, "t = {}", e.time_s);
    }
    assert_eq!(est.estimates.len(), times.len());
}

#[test]
fn interpolated_points_stay_near_truth() {
    let s = cv_only_scenario(GridSpec::Range { start_s: 0.0, end_s: 2.9, step_s: 0.1 });
    let o = run_group_scenario(&s, 9).unwrap();
    let est = &o.nodes[0].estimate;
    assert_eq!(est.regime, GridRegime::Approximation);
    for e in &est.estimates {
        let truth = o.simulation.truth.trajectory.state_at(e.time_s).unwrap();
        let err = (e.state.position_m - truth.position_m).norm();
        assert!(err < 300.0, "t = {} error {err}", e.time_s);
    }
}

/// One-hypothesis estimate whose state at t = 0 is `x`.
fn single_estimate(motion: MotionModel, x: &KinematicState) -> EstimateSet {
    let snap = HypothesisSnapshot {
        class_id: 1,
        state_id: 1,
        motion,
        time_s: 0.0,
        mean: x.to_vector(),
        covariance: StateMatrix::identity(),
        log_weight: 0.0,
    };
    EstimateSet {
        class_id: 1,
        class_posterior: vec![(1, 1.0)],
        regime: GridRegime::Approximation,
        estimates: vec![GridEstimate {
            time_s: 0.0,
            state_id: 1,
            state: *x,
            covariance: StateMatrix::identity(),
            hypothesis_weights: vec![1.0],
        }],
        hypotheses: vec![HypothesisPosterior { class_id: 1, state_id: 1, probability: 1.0 }],
        first_snapshot: vec![snap.clone()],
        last_snapshot: vec![snap],
        filter_track: vec![],
        clamp_events: 0,
        observation_span: (0.0, 0.0),
    }
}

#[test]
fn ballistic_endpoints_match_the_parabola() {
    // motion along the ellipsoid normal: altitude is exactly h0 + v t + a t^2 / 2
    let e = EllipsoidModel::WGS84;
    let g = GeodeticCoord::from_degrees(1000.0, 52.0, 4.0).unwrap();
    let up = local_enu_frame(&g, &e).up;
    let (h0, v, a) = (1000.0, 50.0, -10.0);
    let x = KinematicState::new(0.0, geodetic_to_ecef(&g, &e), up * v, up * a);
    let est = single_estimate(MotionModel::constant_acceleration(0.01), &x);
    let env = Environment::default();
    let ctx = ReportContext {
        reference_position_m: geodetic_to_ecef(&GeodeticCoord::from_degrees(0.0, 52.0, 4.1).unwrap(), &e),
        environment: &env,
        horizon_s: 60.0,
        step_s: 0.7,
        zero_speed_mps: 0.0,
    };
    let report = task_class_report(&est, &ctx);
    let disc = (v * v - 2.0 * a * h0).sqrt();
    let (t_launch, t_impact) = ((-v + disc) / a, (-v - disc) / a);
    assert_eq!((t_launch, t_impact), (-10.0, 20.0));
    for (endpoint, t_oracle) in [(&report.strategic.initial_point, t_launch), (&report.strategic.final_point, t_impact)] {
        match endpoint {
            Endpoint::Reached { predicate, time_s, position_m, .. } => {
                assert_eq!(*predicate, TerminalPredicate::TerrainContact);
                assert!((time_s - t_oracle).abs() < 1e-6, "{time_s} vs {t_oracle}");
                let ground = x.position_m - up * h0;
                assert!((position_m - ground).norm() < 1e-3);
            }
            other => panic!("expected terrain contact, got {other:?}"),
        }
    }
}

#[test]
fn decelerating_object_stops_when_the_parabola_says() {
    let e = EllipsoidModel::WGS84;
    let g = GeodeticCoord::from_degrees(5000.0, -10.0, 120.0).unwrap();
    let east = local_enu_frame(&g, &e).east;
    let x = KinematicState::new(0.0, geodetic_to_ecef(&g, &e), east * 100.0, east * -5.0);
    let est = single_estimate(MotionModel::constant_acceleration(0.01), &x);
    let env = Environment::default();
    let ctx = ReportContext {
        reference_position_m: x.position_m,
        environment: &env,
        horizon_s: 60.0,
        step_s: 0.5,
        zero_speed_mps: 1.0,
    };
    let report = task_class_report(&est, &ctx);
    match report.strategic.final_point {
        Endpoint::Reached { predicate, time_s, position_m, .. } => {
            assert_eq!(predicate, TerminalPredicate::ZeroSpeed);
            // 100 - 5 t = 1
            assert!((time_s - 19.8).abs() < 1e-9, "{time_s}");
            let travelled = 100.0 * 19.8 - 2.5 * 19.8 * 19.8;
            assert!((position_m - (x.position_m + east * travelled)).norm() < 1e-6);
        }
        other => panic!("expected a stop, got {other:?}"),
    }
    assert_eq!(report.operative.slant_range_m, 0.0);
}
