//! Cross-engine agreement on randomized models: every engine must produce
//! the same curve bits or fail on the same wavelength.

use masw::batched::BatchedConfig;
use masw::model::{LayeredEarthModel, VelocitySweep};
use masw::parallel::PartitionStrategy;
use masw::{Engine, Error};
use proptest::prelude::*;

fn arb_model() -> impl Strategy<Value = LayeredEarthModel> {
    (1usize..=6).prop_flat_map(|n| {
        (
            prop::collection::vec(0.5f64..6.0, n),
            prop::collection::vec(1600f64..2200.0, n + 1),
            prop::collection::vec(1.05f64..1.5, n + 1),
            prop::collection::vec(1.8f64..2.6, n + 1),
            60f64..120.0,
        )
            .prop_map(|(thickness, density, steps, ratios, vs0)| {
                // shear velocities increase with depth; vp tracks vs with a
                // physically plausible ratio, so validation always passes
                let mut vs = Vec::with_capacity(steps.len());
                let mut v = vs0;
                for step in steps {
                    v *= step;
                    vs.push(v);
                }
                let vp: Vec<f64> = vs.iter().zip(&ratios).map(|(s, r)| s * r).collect();
                LayeredEarthModel::new(thickness, density, vp, vs)
            })
    })
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn engines_agree_on_random_models(
        model in arb_model(),
        wavelengths in prop::collection::vec(0.5f64..80.0, 1..=8),
    ) {
        let sweep = VelocitySweep::new(50.0, 500.0, 0.5);
        let grid_size = (wavelengths.len() * sweep.materialize().unwrap().len()) as u64;
        let serial = Engine::Serial.curve(&model, &wavelengths, &sweep);
        let others = [
            Engine::Parallel { workers: 2, strategy: PartitionStrategy::Contiguous },
            Engine::Parallel { workers: 3, strategy: PartitionStrategy::Modular },
            Engine::Batched(BatchedConfig { block_size: 4, ..BatchedConfig::default() }),
            Engine::Batched(BatchedConfig { block_size: 64, ..BatchedConfig::default() }),
        ];
        for engine in others {
            let result = engine.curve(&model, &wavelengths, &sweep);
            match (&serial, &result) {
                (Ok((sc, sd)), Ok((oc, od))) => {
                    prop_assert_eq!(bits(&sc.velocities), bits(&oc.velocities));
                    if matches!(engine, Engine::Batched(_)) {
                        prop_assert_eq!(*od, grid_size);
                    } else {
                        prop_assert_eq!(od, sd);
                    }
                }
                (
                    Err(Error::NoSignChange { wavelength: a, .. }),
                    Err(Error::NoSignChange { wavelength: b, .. }),
                ) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                (s, o) => prop_assert!(false, "engines diverge: {:?} vs {:?}", s, o),
            }
        }
    }
}
