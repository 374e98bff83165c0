use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use imutok::gradnet::{bind, BoundParams, CodecDims, ConvDecoder, ConvEncoder, DecoderRate, Tape, Tensor};
use imutok::motion::MOTION_DIM;
use imutok::trainer::{synthetic_motion_corpus, train_motion_vqvae, TrainConfig};
use imutok::vqcodec::{quantize, Codebook};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    use rand::Rng;
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

struct Workloads {
    encoder: ConvEncoder,
    decoder: ConvDecoder,
    batch: Tensor,
    latents: Tensor,
    codebook: Codebook,
    corpus: Vec<imutok::motion::MotionSequence>,
}

impl Workloads {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let dims = CodecDims { input: MOTION_DIM, hidden: 128, latent: 64 };
        Self {
            encoder: ConvEncoder::new(dims, &mut rng),
            decoder: ConvDecoder::new(dims, DecoderRate::Latent, &mut rng),
            batch: random(&[16, MOTION_DIM, 64], &mut rng),
            latents: random(&[4096, 64], &mut rng),
            codebook: Codebook::new(1024, 64, 0.99, &mut rng).unwrap(),
            corpus: synthetic_motion_corpus(3, 4, 2.0, 60.0).unwrap(),
        }
    }

    fn codec_step(&self) -> f64 {
        let mut tape = Tape::new();
        let x = tape.constant(self.batch.clone());
        let mut params = self.encoder.params();
        params.extend(self.decoder.params());
        let vars = bind(&mut tape, &params, true);
        let mut cur = BoundParams::new(&vars);
        let z = self.encoder.forward(&mut tape, &mut cur, x).unwrap();
        let y = self.decoder.forward(&mut tape, &mut cur, z).unwrap();
        let d = tape.sub(y, x).unwrap();
        let sq = tape.mul(d, d).unwrap();
        let loss = tape.mean(sq);
        let grads = tape.backward(loss).unwrap();
        grads.get(vars[0]).map_or(0.0, |g| g.data()[0])
    }

    fn quantize(&self) -> usize {
        quantize(&self.latents, &self.codebook).unwrap().0[0]
    }

    fn train(&self) -> f64 {
        let cfg = TrainConfig { total_steps: 2, batch_size: 8, k: 64, ..TrainConfig::default() };
        let (_, report) = train_motion_vqvae(&self.corpus, &cfg).unwrap();
        report.last("total").unwrap()
    }
}

/// Runs `f` under the default rayon pool and under a one-thread pool, or
/// sequentially when the `parallel` feature is off.
fn compare<R>(c: &mut Criterion, name: &str, f: impl Fn() -> R + Sync) {
    let mut group = c.benchmark_group(name);
    group.sample_size(10);
    #[cfg(feature = "parallel")]
    {
        group.bench_function("rayon", |b| b.iter(|| std::hint::black_box(f())));
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        group.bench_function("one_thread", |b| single.install(|| b.iter(|| std::hint::black_box(f()))));
    }
    #[cfg(not(feature = "parallel"))]
    group.bench_function("sequential", |b| b.iter(|| std::hint::black_box(f())));
    group.finish();
}

fn benches(c: &mut Criterion) {
    let w = Workloads::new();
    compare(c, "codec_forward_backward", || w.codec_step());
    compare(c, "quantize_4096x1024", || w.quantize());
    compare(c, "motion_train_2_steps", || w.train());
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
