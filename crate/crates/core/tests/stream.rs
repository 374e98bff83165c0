use std::sync::OnceLock;

use proptest::prelude::*;

use imutok::gradnet::Tensor;
use imutok::imusim::{normalize_acceleration, InertiaFrame, InertiaSequence};
use imutok::motion::MOTION_DIM;
use imutok::stream::*;
use imutok::trainer::data::{motion_from_channels, motion_window, simulate_imu};
use imutok::trainer::*;
use imutok::Error;

struct Fixture {
    motion_corpus: Vec<imutok::motion::MotionSequence>,
    motion: MotionTokenizer,
    imu: ImuTokenizer,
    raw: InertiaSequence,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let cfg = TrainConfig { k: 16, d_z: 16, hidden: 24, batch_size: 4, total_steps: 30, ..TrainConfig::default() };
        let motion_corpus = synthetic_motion_corpus(1, 3, 2.0, 60.0).unwrap();
        let (motion, _) = train_motion_vqvae(&motion_corpus, &cfg).unwrap();
        let paired = pair_corpus(&motion_corpus, 1, None).unwrap();
        let (imu, _) = train_imu_tokenizer(&paired, &motion, &cfg).unwrap();
        let raw = simulate_imu(&synthetic_motion(77, 0, 3.0, 60.0), 5).unwrap();
        Fixture { motion_corpus, motion, imu, raw }
    })
}

fn synthetic_motion(seed: u64, i: usize, d: f64, fps: f64) -> imutok::motion::MotionSequence {
    imutok::trainer::data::synthetic_motion(seed, i, d, fps).unwrap()
}

#[test]
fn whole_chunks_emit_chunk_over_l_tokens() {
    let f = fixture();
    assert_eq!((f.imu.config.chunk_len, f.imu.config.l), (16, 4));
    let mut s = StreamState::for_tokenizer(&f.imu).unwrap();
    assert_eq!(s.push_frames(&f.imu, &f.raw.frames[..16]).unwrap().len(), 4);
    assert_eq!(s.buffered(), 0);
    let none = s.push_frames(&f.imu, &f.raw.frames[16..19]).unwrap();
    assert!(none.is_empty());
    assert_eq!((s.buffered(), s.frames_seen(), s.tokens_emitted()), (3, 19, 4));
    assert!(s.push_frames(&f.imu, &[]).unwrap().is_empty());
}

#[test]
fn missing_statistics_are_reported() {
    let f = fixture();
    let mut s = StreamState::new(16, 4, None).unwrap();
    assert!(matches!(s.push_frames(&f.imu, &f.raw.frames[..16]), Err(Error::StatsMissing)));
    s.attach_stats(f.imu.norm.clone());
    assert_eq!(s.push_frames(&f.imu, &f.raw.frames[..16]).unwrap().len(), 4);
    assert!(StreamState::new(10, 4, None).is_err());
    let mut other = StreamState::new(32, 4, Some(f.imu.norm.clone())).unwrap();
    assert!(matches!(other.push_frames(&f.imu, &f.raw.frames[..4]), Err(Error::CheckpointMismatch(_))));
}

#[test]
fn frame_by_frame_equals_offline() {
    let f = fixture();
    let offline = tokenize_offline(&f.imu, &f.raw).unwrap();
    assert_eq!(offline.len(), f.raw.len() / 16 * 4);
    // Offline oracle: each 16-frame block tokenized on its own.
    let norm = normalize_acceleration(&f.raw, &f.imu.norm);
    let blocks: Vec<u16> = (0..f.raw.len() / 16)
        .flat_map(|b| f.imu.tokenize(&norm.slice(16 * b, 16 * b + 16)).unwrap())
        .map(|t| t as u16)
        .collect();
    assert_eq!(offline.tokens, blocks);

    let mut s = StreamState::for_tokenizer(&f.imu).unwrap();
    let mut online = Vec::new();
    for frame in &f.raw.frames {
        online.extend(s.push_frames(&f.imu, std::slice::from_ref(frame)).unwrap());
        assert!(s.buffered() < 16);
    }
    assert_eq!(online, offline.tokens);
}

fn partition() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(0usize..40, 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_partition_gives_offline_tokens(cuts in partition()) {
        let f = fixture();
        let offline = tokenize_offline(&f.imu, &f.raw).unwrap();
        let frames: &[InertiaFrame] = &f.raw.frames;
        let mut s = StreamState::for_tokenizer(&f.imu).unwrap();
        let mut at = 0;
        let mut online = Vec::new();
        for c in cuts.into_iter().cycle() {
            if at >= frames.len() {
                break;
            }
            let end = (at + c).min(frames.len());
            let before = s.frames_seen();
            online.extend(s.push_frames(&f.imu, &frames[at..end]).unwrap());
            prop_assert!(s.frames_seen() >= before);
            at = end;
        }
        prop_assert_eq!(online, offline.tokens);
    }
}

#[test]
fn decode_length_and_determinism() {
    let f = fixture();
    let mut seq = TokenSequence::for_tokenizer(&f.imu, 0);
    seq.tokens = vec![3, 0, 15, 7];
    let a = decode_tokens(&seq, &f.imu, None).unwrap();
    assert_eq!(a.len(), 16);
    let b = decode_tokens(&seq, &f.imu, None).unwrap();
    assert_eq!(a.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    let offline = tokenize_offline(&f.imu, &f.raw).unwrap();
    assert_eq!(decode_tokens(&offline, &f.imu, None).unwrap().len(), 4 * offline.len());
    let empty = TokenSequence::for_tokenizer(&f.imu, 0);
    assert!(decode_tokens(&empty, &f.imu, None).unwrap().is_empty());

    let smooth = decode_tokens(&seq, &f.imu, Some(RootSmoothing::new(0.5).unwrap())).unwrap();
    assert_eq!(smooth.len(), 16);
    assert!(RootSmoothing::new(1.0).is_err());
    let zero = decode_tokens(&seq, &f.imu, Some(RootSmoothing::new(0.0).unwrap())).unwrap();
    assert_eq!(zero, a);
}

#[test]
fn foreign_codebook_is_rejected() {
    let f = fixture();
    let mut seq = TokenSequence::for_tokenizer(&f.imu, 0);
    seq.tokens = vec![1, 2];
    seq.codebook_digest[0] ^= 1;
    assert!(matches!(decode_tokens(&seq, &f.imu, None), Err(Error::DigestMismatch(_))));
    let mut bad = TokenSequence::for_tokenizer(&f.imu, 0);
    bad.tokens = vec![16];
    assert!(decode_tokens(&bad, &f.imu, None).is_err());
}

/// A tokenizer sharing the motion codebook decodes motion tokens of a
/// training window with exactly the reconstruction error the trainer
/// measures on that window.
#[test]
fn decoded_training_window_matches_measured_error() {
    let f = fixture();
    let cfg = &f.motion.config;
    let shared = ImuTokenizer::new(cfg, f.motion.clone(), f.imu.norm.clone()).unwrap();
    for (i, clip) in f.motion_corpus.iter().enumerate() {
        let window = motion_window(clip, 0, cfg.window).unwrap();
        let mut seq = TokenSequence::for_tokenizer(&shared, 0);
        seq.tokens = f.motion.tokenize_window(&window).unwrap().into_iter().map(|t| t as u16).collect();
        let decoded = decode_tokens(&seq, &shared, None).unwrap();
        let gt = motion_from_channels(&window, cfg.fps).unwrap().to_flat();
        let got = decoded.to_flat();
        assert_eq!(got.len(), gt.len());
        let mse = got.iter().zip(&gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / gt.len() as f64;

        let x = Tensor::new(vec![1, MOTION_DIM, cfg.window], window).unwrap();
        let measured = evaluate_motion(&f.motion, &x).unwrap().into_iter().find(|(n, _)| *n == "recon").unwrap().1;
        assert!((mse - measured).abs() <= 1e-9 * measured.max(1.0), "clip {i}: {mse} vs {measured}");
    }
}

#[test]
fn token_file_round_trip() {
    let f = fixture();
    let seq = tokenize_offline(&f.imu, &f.raw).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tokens.mjt");
    write_tokens(std::fs::File::create(&path).unwrap(), &seq).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), TOKEN_HEADER_LEN + 2 * seq.len() + TOKEN_TRAILER_LEN);
    assert_eq!(&bytes[..4], TOKEN_MAGIC);
    let back = read_tokens(bytes.as_slice()).unwrap();
    assert_eq!(back, seq);
    assert_eq!(decode_tokens(&back, &f.imu, None).unwrap(), decode_tokens(&seq, &f.imu, None).unwrap());
}
