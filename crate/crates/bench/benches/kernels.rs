use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use eosnet::filter::{init_bank, UpdateContext};
use eosnet::geodesy::{ecef_to_geodetic, geodetic_to_ecef, EllipsoidModel, GeodeticCoord};
use eosnet::optimizer::{differential_evolution, Bounds, DEParams};
use eosnet::sensor::{build_tiling, direction_to_pixel, pixel_to_direction, LayoutId};
use eosnet_bench::{reference_observations, reference_spec, sphere, sphere_directions};
use std::hint::black_box;

fn geodesy(c: &mut Criterion) {
    let e = EllipsoidModel::WGS84;
    let points: Vec<_> = (0..256)
        .map(|i| {
            let g = GeodeticCoord::from_degrees(100.0 * i as f64, -80.0 + 0.6 * i as f64, -170.0 + 1.3 * i as f64).unwrap();
            geodetic_to_ecef(&g, &e)
        })
        .collect();
    c.bench_function("ecef_to_geodetic x256", |b| {
        b.iter(|| {
            for r in &points {
                black_box(ecef_to_geodetic(black_box(r), &e).unwrap());
            }
        })
    });
}

fn projection(c: &mut Criterion) {
    let array = build_tiling(LayoutId::Cube24);
    let dirs = sphere_directions(512);
    c.bench_function("cube24 pixel round trip x512", |b| {
        b.iter(|| {
            for d in &dirs {
                for tile in &array.tiles {
                    if let Some(p) = direction_to_pixel(tile, d).unwrap() {
                        black_box(pixel_to_direction(tile, &p).unwrap());
                        break;
                    }
                }
            }
        })
    });
}

fn bank_update(c: &mut Criterion) {
    let spec = reference_spec();
    let s = &spec.scenario;
    let obs = reference_observations(&spec, 1);
    let ctx = UpdateContext {
        carrier_modes: &s.carrier_modes,
        environment: &s.environment,
        constraints: &s.constraints,
        settings: &s.filter,
    };
    let bank = init_bank(&s.catalog, &obs, &s.carrier_modes, &s.filter).unwrap();
    let ms = obs.measurements();
    c.bench_function("bank update, reference scenario", |b| {
        b.iter_batched(
            || bank.clone(),
            |mut bank| {
                for m in ms {
                    bank.update(m, &ctx).unwrap();
                }
                bank
            },
            BatchSize::SmallInput,
        )
    });
}

fn estimate(c: &mut Criterion) {
    let spec = reference_spec();
    let mut group = c.benchmark_group("harness");
    group.sample_size(10);
    group.bench_function("estimate reference", |b| b.iter(|| eosnet::harness::estimate(&spec).unwrap()));
    group.finish();
}

fn de(c: &mut Criterion) {
    let bounds = Bounds::continuous(vec![-5.0; 5], vec![5.0; 5]);
    let params = DEParams {
        population: 30,
        differential_weight: 0.7,
        crossover_rate: 0.9,
        max_generations: 50,
        max_evaluations: None,
        seed: 3,
        parallel: false,
    };
    c.bench_function("de sphere 5d, 50 generations", |b| {
        b.iter(|| differential_evolution(sphere, &bounds, &params).unwrap())
    });
}

criterion_group!(benches, geodesy, projection, bank_update, estimate, de);
criterion_main!(benches);
