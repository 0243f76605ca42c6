use evrl::io::*;
use evrl_core::event::{Event, EventFrame, Polarity};
use evrl_core::qnet::{NetworkConfig, QNetwork, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_stream(n: usize, seed: u64) -> EventStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0u64;
    let events = (0..n)
        .map(|_| {
            t += rng.gen_range(0..3);
            let p = if rng.gen() { Polarity::On } else { Polarity::Off };
            Event::new(t, rng.gen_range(0..240), rng.gen_range(0..180), p)
        })
        .collect();
    EventStream {
        width: 240,
        height: 180,
        events,
    }
}

#[test]
fn evt_layout_matches_hand_assembled_bytes() {
    let stream = EventStream {
        width: 3,
        height: 2,
        events: vec![
            Event::new(7, 2, 1, Polarity::Off),
            Event::new(0x0102_0304_0506_0708, 0, 0, Polarity::On),
        ],
    };
    let mut expected = b"EVT1".to_vec();
    expected.extend([1, 0, 3, 0, 2, 0]);
    expected.extend([2, 0, 0, 0, 0, 0, 0, 0]);
    expected.extend([7, 0, 0, 0, 0, 0, 0, 0, 2, 0, 1, 0, 0xFF, 0, 0, 0]);
    expected.extend([8, 7, 6, 5, 4, 3, 2, 1, 0, 0, 0, 0, 1, 0, 0, 0]);
    assert_eq!(encode_events(&stream).unwrap(), expected);
    assert_eq!(decode_events(&expected).unwrap(), stream);
}

#[test]
fn empty_stream_round_trips() {
    let stream = EventStream::empty(240, 180);
    let bytes = encode_events(&stream).unwrap();
    assert_eq!(bytes.len(), EVT_HEADER_LEN);
    assert_eq!(&bytes[10..18], &[0; 8]);
    assert_eq!(decode_events(&bytes).unwrap(), stream);
}

#[test]
fn million_events_round_trip_through_a_file() {
    let stream = random_stream(1_000_000, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.evt");
    write_events_file(&path, &stream).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), EVT_HEADER_LEN + EVT_RECORD_LEN * 1_000_000);
    let back = read_events_file(&path).unwrap();
    assert_eq!(back, stream);
    assert_eq!(encode_events(&back).unwrap(), bytes);
}

#[test]
fn truncation_reports_offset_of_partial_record() {
    let bytes = encode_events(&random_stream(5, 2)).unwrap();
    let cut = &bytes[..EVT_HEADER_LEN + 3 * EVT_RECORD_LEN + 7];
    match decode_events(cut) {
        Err(FormatError::Binary { offset, .. }) => assert_eq!(offset, (EVT_HEADER_LEN + 3 * EVT_RECORD_LEN) as u64),
        other => panic!("expected a binary error, got {other:?}"),
    }
    assert!(matches!(decode_events(&bytes[..10]), Err(FormatError::Binary { .. })));
}

#[test]
fn corrupt_headers_and_records_are_rejected_with_offsets() {
    let good = encode_events(&random_stream(3, 3)).unwrap();
    let offset_of = |bytes: &[u8]| match decode_events(bytes) {
        Err(FormatError::Binary { offset, .. }) => offset,
        other => panic!("expected a binary error, got {other:?}"),
    };
    let mut b = good.clone();
    b[0] = b'X';
    assert_eq!(offset_of(&b), 0);
    let mut b = good.clone();
    b[4] = 9;
    assert_eq!(offset_of(&b), 4);
    let mut b = good.clone();
    b[EVT_HEADER_LEN + EVT_RECORD_LEN + 12] = 0;
    assert_eq!(offset_of(&b), (EVT_HEADER_LEN + EVT_RECORD_LEN + 12) as u64);
    let mut b = good.clone();
    b[EVT_HEADER_LEN + 8..EVT_HEADER_LEN + 10].copy_from_slice(&240u16.to_le_bytes());
    assert_eq!(offset_of(&b), (EVT_HEADER_LEN + 8) as u64);
    let ordered = EventStream {
        width: 4,
        height: 4,
        events: [10, 20, 30].map(|t| Event::new(t, 1, 1, Polarity::On)).to_vec(),
    };
    let mut b = encode_events(&ordered).unwrap();
    let at = EVT_HEADER_LEN + 2 * EVT_RECORD_LEN;
    b[at..at + 8].copy_from_slice(&15u64.to_le_bytes());
    assert_eq!(offset_of(&b), at as u64);
    let mut b = good;
    b.push(0);
    assert!(offset_of(&b) > 0);
}

#[test]
fn writer_refuses_invalid_streams_without_creating_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.evt");
    let unsorted = EventStream {
        width: 4,
        height: 4,
        events: vec![Event::new(5, 0, 0, Polarity::On), Event::new(4, 0, 0, Polarity::On)],
    };
    assert!(matches!(write_events_file(&path, &unsorted), Err(FormatError::Invalid(_))));
    let outside = EventStream {
        width: 4,
        height: 4,
        events: vec![Event::new(5, 4, 0, Polarity::On)],
    };
    assert!(write_events_file(&path, &outside).is_err());
    assert!(!path.exists());
}

#[test]
fn csv_matches_text_fixture() {
    let text = "0,1,2,1\n5,3,4,-1\n5,0,0,1\n";
    let events = read_events_csv(text.as_bytes()).unwrap();
    assert_eq!(
        events,
        [
            Event::new(0, 1, 2, Polarity::On),
            Event::new(5, 3, 4, Polarity::Off),
            Event::new(5, 0, 0, Polarity::On),
        ]
    );
    let mut out = Vec::new();
    write_events_csv(&mut out, &events).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), text);
}

#[test]
fn csv_errors_name_the_line() {
    let line_of = |text: &str| match read_events_csv(text.as_bytes()) {
        Err(FormatError::Text { line, .. }) => line,
        other => panic!("expected a text error, got {other:?}"),
    };
    assert_eq!(line_of("0,1,2,1\n1,1,x,1\n"), 2);
    assert_eq!(line_of("0,1,2,1\n1,1,1,1\n2,1,1,0\n"), 3);
    assert_eq!(line_of("0,1,2,1\n4,1,2,1\n3,1,1,1\n"), 3);
    assert_eq!(line_of("0,1,2\n"), 1);
    assert_eq!(read_events_csv("".as_bytes()).unwrap(), []);
}

proptest! {
    #[test]
    fn evt_and_csv_round_trip(seed in any::<u64>(), n in 0usize..300) {
        let stream = random_stream(n, seed);
        prop_assert_eq!(&decode_events(&encode_events(&stream).unwrap()).unwrap(), &stream);
        let mut text = Vec::new();
        write_events_csv(&mut text, &stream.events).unwrap();
        prop_assert_eq!(read_events_csv(text.as_slice()).unwrap(), stream.events);
    }

    #[test]
    fn decoder_never_panics_on_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_events(&bytes);
        let _ = decode_checkpoint(&bytes);
        let _ = decode_frame_pgm(&bytes);
    }
}

fn random_frames(w: usize, h: usize, n: usize, seed: u64) -> Vec<EventFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| EventFrame::from_values(w, h, (0..w * h).map(|_| rng.gen_range(-1..=1)).collect()).unwrap())
        .collect()
}

fn trained_like_network(config: NetworkConfig, seed: u64) -> QNetwork<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = QNetwork::<f32>::new(config, &mut rng).unwrap();
    for (i, a) in net.arrays_mut().into_iter().enumerate() {
        for v in a.iter_mut() {
            *v = if matches!(i, 5 | 11) { rng.gen_range(0.5..2.0) } else { rng.gen_range(-1.0..1.0) };
        }
    }
    net
}

#[test]
fn checkpoint_round_trip_reproduces_forward_bit_exactly() {
    let config = NetworkConfig::new(64, 48, 3);
    let net = trained_like_network(config, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.ckpt");
    save_checkpoint(&path, &net, 1234).unwrap();
    let ckpt = load_checkpoint_for(&path, &config).unwrap();
    assert_eq!(ckpt.step, 1234);
    assert_eq!(ckpt.network, net);
    for frame in random_frames(64, 48, 10, 5) {
        let x = Tensor::from_frames([&frame]).unwrap();
        let a = net.predict(&x).unwrap();
        let b = ckpt.network.predict(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    assert_eq!(std::fs::read(&path).unwrap(), encode_checkpoint(&ckpt.network, 1234));
}

#[test]
fn checkpoint_for_other_resolution_is_a_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.ckpt");
    let small = NetworkConfig::new(64, 48, 2);
    save_checkpoint(&path, &trained_like_network(small, 6), 0).unwrap();
    match load_checkpoint_for(&path, &NetworkConfig::new(240, 180, 2)) {
        Err(FormatError::Invalid(m)) => assert!(m.contains("mismatch") && m.contains("64x48") && m.contains("240x180")),
        other => panic!("expected a mismatch, got {other:?}"),
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let net = trained_like_network(NetworkConfig::new(16, 12, 2), 7);
    let good = encode_checkpoint(&net, 9);
    let mut b = good.clone();
    b[1] ^= 0xFF;
    assert!(matches!(decode_checkpoint(&b), Err(FormatError::Binary { offset: 0, .. })));
    assert!(matches!(decode_checkpoint(&good[..good.len() - 1]), Err(FormatError::Binary { .. })));
    let mut b = good.clone();
    b[38..42].copy_from_slice(&99u32.to_le_bytes());
    assert!(matches!(decode_checkpoint(&b), Err(FormatError::Binary { offset: 38, .. })));
    let mut b = good;
    let n = b.len();
    b[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(decode_checkpoint(&b).is_err());
}

#[test]
fn pgm_of_blank_frame_is_all_mid_gray() {
    let bytes = encode_frame_pgm(&EventFrame::zeros(5, 3));
    let header = b"P5\n5 3\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert!(bytes[header.len()..].iter().all(|&b| b == 128));
    assert_eq!(bytes.len(), header.len() + 15);
}

#[test]
fn pgm_single_event_lands_at_row_major_position() {
    let mut f = EventFrame::zeros(5, 3);
    f.set(3, 2, Polarity::On);
    let bytes = encode_frame_pgm(&f);
    let body = &bytes[bytes.len() - 15..];
    let bright: Vec<usize> = (0..15).filter(|&i| body[i] == 255).collect();
    assert_eq!(bright, [2 * 5 + 3]);
    assert_eq!(body.iter().filter(|&&b| b == 128).count(), 14);
}

#[test]
fn pgm_round_trips_through_reference_decoder() {
    for (i, frame) in random_frames(17, 9, 5, 8).into_iter().enumerate() {
        let bytes = encode_frame_pgm(&frame);
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm)
            .unwrap()
            .into_luma8();
        assert_eq!((img.width(), img.height()), (17, 9));
        let values: Vec<i8> = img
            .pixels()
            .map(|p| match p.0[0] {
                0 => -1,
                128 => 0,
                255 => 1,
                g => panic!("unexpected gray {g}"),
            })
            .collect();
        assert_eq!(EventFrame::from_values(17, 9, values).unwrap(), frame, "frame {i}");
        assert_eq!(decode_frame_pgm(&bytes).unwrap(), frame);
    }
}

#[test]
fn intensity_pgm_scales_linear_intensity() {
    let frame = evrl_core::scene::IntensityFrame::filled(2, 2, (0.4f32).ln());
    let bytes = encode_intensity_pgm(&frame);
    assert!(bytes.ends_with(&[102, 102, 102, 102]));
}
