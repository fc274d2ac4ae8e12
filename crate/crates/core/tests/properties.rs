use std::sync::Arc;

use collab::clock::SimClock;
use collab::coding::{self, cohens_kappa, CodedTurn, IpaCategory, Rater};
use collab::report::sequence_strip;
use collab::timeline::{self, AgentId, EventKind, FileKind, Timeline};
use collab::transcript;
use proptest::prelude::*;

fn coded(codes: &[u8]) -> Vec<CodedTurn> {
    codes
        .iter()
        .enumerate()
        .map(|(i, &c)| CodedTurn::new(i, IpaCategory::new(c).unwrap(), Rater::Llm))
        .collect()
}

fn body_line() -> impl Strategy<Value = String> {
    prop_oneof![
        "[ -~]{0,30}",
        Just("**Someone (Role)** 6:35 PM".to_string()),
        Just("<File: a.txt>".to_string()),
        "\\\\[a-z]{0,5}",
    ]
}

/// Message bodies whose last line has visible text.
fn body() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(body_line(), 0..4),
        "[A-Za-z0-9][ -~]{0,20}[A-Za-z0-9.?!]",
    )
        .prop_map(|(mut lines, last)| {
            lines.push(last);
            lines.join("\n")
        })
}

#[derive(Debug, Clone)]
enum Turn {
    Message(usize, String),
    File(usize, String, String),
}

fn turns() -> impl Strategy<Value = Vec<Turn>> {
    prop::collection::vec(
        prop_oneof![
            (0..3usize, body()).prop_map(|(a, b)| Turn::Message(a, b)),
            (0..3usize, "[a-z_]{1,8}\\.(java|md|py)", body())
                .prop_map(|(a, f, b)| Turn::File(a, f, b)),
        ],
        0..10,
    )
}

const PEOPLE: [(&str, &str); 3] = [
    ("Peter", "CEO"),
    ("Boshen", "Product Manager"),
    ("Benjamin", "Client"),
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn markdown_round_trip(turns in turns()) {
        let tl = Timeline::new(Arc::new(SimClock::new(1_704_134_100_000)));
        for (name, role) in PEOPLE {
            tl.append(AgentId::from_name(name), EventKind::join(name, role)).unwrap();
        }
        for t in &turns {
            let (a, kind) = match t {
                Turn::Message(a, b) => (*a, EventKind::message(b.clone())),
                Turn::File(a, f, b) => (*a, EventKind::file(f.clone(), FileKind::Code, b.clone())),
            };
            tl.append(AgentId::from_name(PEOPLE[a].0), kind).unwrap();
        }
        let events = tl.snapshot();
        let parsed = transcript::parse_markdown(&transcript::render_markdown(&events));
        prop_assert_eq!(parsed.skipped_lines, 0);
        prop_assert_eq!(parsed.turns, transcript::turns_from_events(&events, 0));
    }

    #[test]
    fn jsonl_and_csv_round_trip(turns in turns()) {
        let tl = Timeline::new(Arc::new(SimClock::new(0)));
        tl.append(AgentId::from_name("Peter"), EventKind::join("Peter", "CEO")).unwrap();
        for t in &turns {
            let kind = match t {
                Turn::Message(_, b) => EventKind::message(b.clone()),
                Turn::File(_, f, b) => EventKind::file(f.clone(), FileKind::Document, b.clone()),
            };
            tl.append(AgentId::from_name("Peter"), kind).unwrap();
        }
        let events = tl.snapshot();
        let back = timeline::read_jsonl(timeline::to_jsonl(&events).as_bytes()).unwrap();
        prop_assert_eq!(&back, &events);
        let rows = transcript::turns_from_events(&events, 0);
        prop_assert_eq!(transcript::from_csv(&transcript::to_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn kappa_bounds_and_symmetry(pairs in prop::collection::vec((1u8..=13, 1u8..=13), 1..40)) {
        let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let ab = cohens_kappa(&coded(&a), &coded(&b)).unwrap();
        let ba = cohens_kappa(&coded(&b), &coded(&a)).unwrap();
        prop_assert!((ab.kappa - ba.kappa).abs() < 1e-12);
        prop_assert!(ab.kappa <= 1.0 + 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p_o) && (0.0..=1.0).contains(&ab.p_e));
        let total: u64 = ab.confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, a.len());
        let aa = cohens_kappa(&coded(&a), &coded(&a)).unwrap();
        prop_assert_eq!(aa.kappa, 1.0);
    }

    #[test]
    fn codes_csv_round_trip(codes in prop::collection::vec(1u8..=13, 0..30)) {
        let turns: Vec<CodedTurn> = coded(&codes)
            .into_iter()
            .map(|c| c.with_role("Peter, the \"CEO\"", "CEO"))
            .collect();
        let mut buf = Vec::new();
        coding::write_codes(&mut buf, &turns).unwrap();
        let back = coding::read_codes(buf.as_slice(), &Rater::Human("x".into())).unwrap();
        prop_assert_eq!(back.len(), turns.len());
        for (x, y) in back.iter().zip(&turns) {
            prop_assert_eq!((x.turn_index, x.category, &x.rater, &x.speaker), (y.turn_index, y.category, &y.rater, &y.speaker));
        }
    }

    #[test]
    fn terciles_partition_the_strip(codes in prop::collection::vec(1u8..=13, 0..50)) {
        let strip = sequence_strip(&coded(&codes));
        let n = codes.len();
        let sizes: Vec<u64> = strip.terciles.iter().map(|t| t.values().sum()).collect();
        prop_assert_eq!(sizes.iter().sum::<u64>() as usize, n);
        // thirds differ in size by at most one
        if n > 0 {
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }
}
