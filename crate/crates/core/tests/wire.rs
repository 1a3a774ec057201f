use fsd_core::wire::{decode, encode, SteeringFrame, StreamDecoder, BUFFER_LIMIT};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn thousand_random_frames_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut stream = Vec::new();
    let mut sent = Vec::new();
    for _ in 0..1000 {
        let f = SteeringFrame {
            seq: rng.random(),
            steering: rng.random(),
            speed_cmd: rng.random(),
        };
        assert_eq!(decode(&encode(&f)), Ok(f));
        stream.extend_from_slice(&encode(&f));
        sent.push(f);
    }
    let mut d = StreamDecoder::new();
    let mut got = Vec::new();
    // Feed in awkward chunk sizes.
    for chunk in stream.chunks(7) {
        got.extend(d.push(chunk));
    }
    assert_eq!(got, sent);
    assert_eq!(d.stats().garbage_bytes, 0);
}

fn garbage(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.random_range(0..0xAA)).collect()
}

#[test]
fn garbage_around_one_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = SteeringFrame::new(9, 0.7, 3.1);
    let mut stream = garbage(&mut rng, 37);
    stream.extend_from_slice(&encode(&f));
    stream.extend(garbage(&mut rng, 23));
    let mut d = StreamDecoder::new();
    assert_eq!(d.push(&stream), vec![f]);
    assert_eq!(d.stats().garbage_bytes, 60);
}

#[test]
fn fake_sync_in_garbage_does_not_hide_frame() {
    let f = SteeringFrame::new(1, 0.25, 1.0);
    let mut stream = vec![0xAA, 0x55, 0x01, 0x02, 0xAA, 0x55];
    stream.extend_from_slice(&encode(&f));
    stream.extend_from_slice(&[0xAA]);
    let mut d = StreamDecoder::new();
    assert_eq!(d.push(&stream), vec![f]);
    assert!(d.stats().bad_crc >= 1);
}

#[test]
fn resync_after_long_prefix_keeps_buffer_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut d = StreamDecoder::new();
    for _ in 0..40 {
        d.push(&garbage(&mut rng, 200));
        assert!(d.buffered() <= BUFFER_LIMIT);
    }
    let f = SteeringFrame::new(200, 0.1, 0.0);
    let mut frames = Vec::new();
    for b in encode(&f) {
        frames.extend(d.push(&[b]));
        assert!(d.buffered() <= BUFFER_LIMIT);
    }
    assert_eq!(frames, vec![f]);
}

proptest! {
    #[test]
    fn steering_quantization_is_lossless(y in 0.0f64..=1.0) {
        let f = SteeringFrame::new(0, y, 0.0);
        let back = decode(&encode(&f)).unwrap().y();
        prop_assert!((back - y).abs() <= 1.0 / 65535.0);
    }
}
