use proptest::prelude::*;

use ispsearch::data::parse_pgm;
use ispsearch::metrics::{psnr, ssim};
use ispsearch::modules::{LearnedModules, ModuleId};
use ispsearch::pipeline::{PipelineConfig, PipelineStep};
use ispsearch::proxy::{ProxyArch, ProxySet};
use ispsearch::supernet::{StepPlan, SearchModules, SuperNet};
use ispsearch::{Domain, Tensor};

fn image(h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f32..=1.0, h * w * 3).prop_map(move |d| Tensor::from_vec(h, w, 3, d).unwrap())
}

fn srgb_net() -> SuperNet {
    let pool = [ModuleId::Gamma, ModuleId::Reinhard, ModuleId::Manual, ModuleId::Linear, ModuleId::Grayworld];
    let proxies = ProxySet::untrained(&pool, &ProxyArch::compact(), 0).unwrap();
    SuperNet::new(&[StepPlan::SRGB_SRGB], &pool, SearchModules { proxies, learned: LearnedModules::empty() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psnr_is_symmetric(a in image(6, 6), b in image(6, 6)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_of_identical_images_is_one(a in image(12, 12)) {
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weights_form_a_simplex(logits in prop::collection::vec(-20.0f32..20.0, 6), pruned in prop::collection::vec(any::<bool>(), 6)) {
        let mut net = srgb_net();
        for ((s, z), p) in net.steps[0].slots.iter_mut().zip(&logits).zip(&pruned) {
            s.logit = *z;
            s.valid = !p;
        }
        net.steps[0].slots[0].valid = true;
        let a = net.alpha(0);
        let total: f32 = a.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-5);
        for (w, s) in a.iter().zip(&net.steps[0].slots) {
            prop_assert!(*w >= 0.0);
            if !s.valid {
                prop_assert_eq!(*w, 0.0);
            }
        }
    }

    #[test]
    fn pruning_keeps_the_argmax(logits in prop::collection::vec(-5.0f32..5.0, 6), eta in 0.01f32..0.99) {
        let mut net = srgb_net();
        for (s, z) in net.steps[0].slots.iter_mut().zip(&logits) {
            s.logit = *z;
        }
        let best = net.argmax(0);
        let before = net.architecture_weight_count();
        let removed = net.prune(eta);
        prop_assert!(net.steps[0].slots[best].valid);
        prop_assert_eq!(net.architecture_weight_count() + removed.len(), before);
        prop_assert!(net.prune(eta).is_empty());
    }

    #[test]
    fn pipeline_json_round_trips(g in 0.0f32..=1.0, gains in prop::collection::vec(0.0f32..=1.0, 3)) {
        let cfg = PipelineConfig::new(
            vec![
                PipelineStep::new(ModuleId::Bilinear, vec![]),
                PipelineStep::new(ModuleId::Linear, gains),
                PipelineStep::new(ModuleId::Gamma, vec![g]),
            ],
            Domain::BayerRaw,
        ).unwrap();
        let back = PipelineConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn pgm_payload_round_trips(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        let samples: Vec<u16> = (0..w * h).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 17) as u16).collect();
        let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
        for s in &samples {
            bytes.extend_from_slice(&s.to_be_bytes());
        }
        let (ph, pw, max, parsed) = parse_pgm(&bytes).unwrap();
        prop_assert_eq!((ph, pw, max), (h, w, 65535));
        prop_assert_eq!(parsed, samples);
    }
}
