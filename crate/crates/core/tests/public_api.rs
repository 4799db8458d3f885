use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tuss_core::dsp::{resample, AudioBuffer, BandSplitSpec, StftConfig};
use tuss_core::prompt::check_prompts;
use tuss_core::{ModelConfig, PromptCategory, PromptSet, StackConfig, Tuss};

fn tiny() -> ModelConfig {
    ModelConfig {
        sample_rate_hz: 8000,
        stft: StftConfig::new(32, 16),
        band_spec: BandSplitSpec::new(vec![5, 12]).unwrap(),
        embed_dim: 8,
        num_heads: 2,
        norm_groups: 2,
        conv_kernel: 3,
        conv_stride: 1,
        cross: StackConfig { blocks: 1, ffn_hidden: 8, attn_hidden: 4 },
        tse: StackConfig { blocks: 1, ffn_hidden: 8, attn_hidden: 4 },
        positional_encoding: true,
        rope_base: 10_000.0,
        norm_eps: 1e-5,
        prompt_init_std: 0.02,
    }
}

fn category() -> impl Strategy<Value = PromptCategory> {
    (0usize..8).prop_map(|i| PromptCategory::from_index(i).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn prompt_set_accepts_exactly_the_valid_lists(list in proptest::collection::vec(category(), 0..7)) {
        prop_assert_eq!(PromptSet::new(list.clone()).is_ok(), check_prompts(&list).is_ok());
    }

    #[test]
    fn separation_keeps_arity_and_input_length(
        len in 200usize..1200,
        rate in prop::sample::select(vec![8000u32, 11025, 16000, 44100]),
        seed in 0u64..1000,
    ) {
        let model = Tuss::<f32>::new(tiny(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let x: Vec<f32> = (0..len).map(|i| ((i * 37 % 101) as f32 / 101.0 - 0.5) * 0.2).collect();
        let audio = AudioBuffer::new(x, rate).unwrap();
        let prompts = PromptSet::new(vec![PromptCategory::Speech, PromptCategory::Speech, PromptCategory::MusicMix]).unwrap();
        let outs = model.separate(&audio, &prompts).unwrap();
        prop_assert_eq!(outs.len(), 3);
        for o in &outs {
            prop_assert_eq!(o.len(), len);
            prop_assert_eq!(o.sample_rate_hz, rate);
            prop_assert!(o.samples.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn resampling_length_tracks_rate_ratio(len in 1usize..3000, to in prop::sample::select(vec![8000i64, 16000, 22050, 48000])) {
        let audio = AudioBuffer::new(vec![0.25f32; len], 16000).unwrap();
        let out = resample(&audio, to).unwrap();
        let want = len as f64 * to as f64 / 16000.0;
        prop_assert!((out.len() as f64 - want).abs() <= 1.0, "{} vs {}", out.len(), want);
    }
}
