use circrnn::arch::{CellKind, GateActivation, LayerSpec};
use circrnn::dense::DenseNetwork;
use circrnn::model_file::ModelFile;
use circrnn::quant::{ActivationMode, QuantConfig, QuantizedNetwork};
use circrnn::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_model(rng: &mut ChaCha8Rng) -> ModelFile {
    let block = 1usize << rng.gen_range(0..4);
    let lstm = rng.gen_bool(0.5);
    let width = block * rng.gen_range(1..5) * 2;
    let spec = LayerSpec {
        cell: if lstm { CellKind::Lstm } else { CellKind::Gru },
        input_dim: block * rng.gen_range(1..4),
        layer_sizes: vec![width; rng.gen_range(1..3)],
        projection: if lstm && rng.gen_bool(0.5) { Some(width / 2) } else { None },
        output_dim: if rng.gen_bool(0.5) { Some(block * rng.gen_range(1..3)) } else { None },
        block_size: block,
        io_block_size: if rng.gen_bool(0.3) && block > 1 { Some(block / 2) } else { None },
    };
    let act = if rng.gen_bool(0.5) { GateActivation::Sigmoid } else { GateActivation::Tanh };
    let net = DenseNetwork::random(&spec, act, rng).unwrap().project().unwrap();
    if rng.gen_bool(0.5) {
        return ModelFile::new(net);
    }
    let calib: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| (0..5).map(|_| (0..spec.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
        .collect();
    let cfg = QuantConfig {
        total_bits: rng.gen_range(4..=16),
        activation: if rng.gen_bool(0.5) { ActivationMode::Exact } else { ActivationMode::Pwl { segments: 32 } },
    };
    ModelFile::with_quantization(QuantizedNetwork::calibrate(&net, &calib, cfg).unwrap())
}

#[test]
fn write_read_write_is_byte_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dir = std::env::temp_dir().join(format!("circrnn-roundtrip-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    for i in 0..50 {
        let m = random_model(&mut rng);
        let a = dir.join(format!("{i}.a"));
        let b = dir.join(format!("{i}.b"));
        m.write(&a).unwrap();
        let back = ModelFile::read(&a).unwrap();
        assert_eq!(back.network, m.network);
        assert_eq!(back.quantized.is_some(), m.quantized.is_some());
        back.write(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "model {i}");
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn any_single_byte_flip_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bytes = random_model(&mut rng).to_bytes().unwrap();
    for i in 0..bytes.len() {
        let mut bad = bytes.clone();
        bad[i] ^= 0x5a;
        assert!(matches!(ModelFile::from_bytes(&bad), Err(Error::Corrupt(_))), "byte {i}");
    }
    for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(ModelFile::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))));
    }
}
