use proptest::prelude::*;
use signspeak_core::data::SensorFrame;
use signspeak_core::stream::{Disposition, SegmentEvent, Segmenter, SegmenterConfig};

const AT_THRESHOLD: [u16; 5] = [1000; 5];
const JUST_BELOW: [u16; 5] = [1000, 1000, 1000, 1000, 999];

fn frame(v: [u16; 5]) -> SensorFrame {
    SensorFrame::new(v).unwrap()
}

/// Alternating runs: `(active_len, rest_len)` pairs; active frames vary but
/// stay below the threshold, rest frames sit at or above it.
fn stream_from(runs: &[(usize, usize, u16)]) -> Vec<SensorFrame> {
    let mut out = Vec::new();
    for &(active, rest, v) in runs {
        for t in 0..active {
            out.push(if t % 7 == 3 {
                frame(JUST_BELOW)
            } else {
                frame([v, v, 300, 200, (t % 1024) as u16])
            });
        }
        for t in 0..rest {
            out.push(if t % 2 == 0 {
                frame(AT_THRESHOLD)
            } else {
                frame([1023; 5])
            });
        }
    }
    out
}

/// Brute force: scan for maximal runs of frames whose sum is below 5000 and
/// that are followed by an inactive frame.
fn oracle(frames: &[SensorFrame]) -> Vec<(u64, u64, Disposition)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < frames.len() {
        if frames[i].sum() >= 5000 {
            i += 1;
            continue;
        }
        let start = i;
        while i < frames.len() && frames[i].sum() < 5000 {
            i += 1;
        }
        if i == frames.len() {
            break;
        }
        let len = i - start;
        let d = match len {
            0..=49 => Disposition::TooShort,
            50..=79 => Disposition::Emitted,
            _ => Disposition::TooLong,
        };
        out.push((start as u64, i as u64, d));
    }
    out
}

fn segment(frames: &[SensorFrame]) -> (Vec<SegmentEvent>, Segmenter) {
    let mut seg = Segmenter::new(SegmenterConfig::default()).unwrap();
    let events = frames.iter().filter_map(|&f| seg.push(f)).collect();
    (events, seg)
}

fn runs() -> impl Strategy<Value = Vec<(usize, usize, u16)>> {
    proptest::collection::vec((0usize..120, 1usize..6, 0u16..1000), 0..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn segmenter_matches_brute_force(runs in runs()) {
        let frames = stream_from(&runs);
        let (events, seg) = segment(&frames);
        let got: Vec<_> = events.iter().map(|e| (e.start_index, e.end_index, e.disposition)).collect();
        prop_assert_eq!(got, oracle(&frames));

        let c = seg.counters();
        prop_assert_eq!(c.closed(), events.len() as u64);
        prop_assert_eq!(c.emitted, events.iter().filter(|e| e.disposition == Disposition::Emitted).count() as u64);
        prop_assert_eq!(seg.frames_seen(), frames.len() as u64);
        for e in &events {
            let slice = &frames[e.start_index as usize..e.end_index as usize];
            match e.disposition {
                Disposition::Emitted => {
                    prop_assert!((50..=79).contains(&e.len()));
                    prop_assert_eq!(&e.frames[..], slice);
                }
                Disposition::TooShort => prop_assert_eq!(&e.frames[..], slice),
                Disposition::TooLong => prop_assert_eq!(&e.frames[..], &slice[..80]),
            }
        }
    }

    #[test]
    fn chunked_feeding_matches_whole_stream(runs in runs(), cuts in proptest::collection::vec(1usize..40, 1..20)) {
        let frames = stream_from(&runs);
        let (whole, _) = segment(&frames);
        let mut seg = Segmenter::new(SegmenterConfig::default()).unwrap();
        let mut chunked = Vec::new();
        let mut rest = &frames[..];
        for &n in cuts.iter().cycle() {
            if rest.is_empty() {
                break;
            }
            let (head, tail) = rest.split_at(n.min(rest.len()));
            chunked.extend(head.iter().filter_map(|&f| seg.push(f)));
            rest = tail;
        }
        prop_assert_eq!(whole, chunked);
    }
}

#[test]
fn exact_threshold_frame_closes_segment() {
    let mut frames = vec![frame(JUST_BELOW); 60];
    frames.push(frame(AT_THRESHOLD));
    let (events, _) = segment(&frames);
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].len(), 60);
    assert_eq!(events[0].disposition, Disposition::Emitted);
}

#[test]
fn open_segment_at_end_of_stream_is_not_closed() {
    let frames = vec![frame([10; 5]); 70];
    let (events, seg) = segment(&frames);
    assert!(events.is_empty());
    assert_eq!(seg.pending_len(), 70);
    assert_eq!(seg.counters().closed(), 0);
}

#[test]
fn too_long_segments_keep_a_bounded_buffer() {
    let mut seg = Segmenter::new(SegmenterConfig::default()).unwrap();
    for _ in 0..10_000 {
        assert!(seg.push(frame([10; 5])).is_none());
        assert!(seg.buffered() <= 80);
    }
    let e = seg.push(frame([1023; 5])).unwrap();
    assert_eq!(e.disposition, Disposition::TooLong);
    assert_eq!(e.len(), 10_000);
}
