use autoform_core::bench::*;
use autoform_core::verify::{StubVerifier, VerificationStatus, Verifier};
use proptest::prelude::*;

const GOOD: &str = ":= by norm_num";
const BAD: &str = ":= by exact bogus_lemma";
const SORRY: &str = ":= by sorry";

fn items(n: usize) -> Vec<BenchItem> {
    (1..=n)
        .map(|k| BenchItem {
            id: format!("p{k}#1"),
            statement: format!("theorem p{k} : {k} + 0 = {k} := by sorry"),
        })
        .collect()
}

fn verifier() -> StubVerifier {
    StubVerifier::default().error_on("bogus_lemma", "unknown identifier 'bogus_lemma'")
}

fn prover(streams: &[Vec<&'static str>]) -> RecordedProver {
    streams.iter().enumerate().fold(RecordedProver::new(), |p, (i, s)| {
        p.stream(
            &format!("theorem p{} :", i + 1),
            s.iter().map(|r| r.to_string()).collect(),
        )
    })
}

fn cfg(sample_size: usize, attempts: u32, seed: u64) -> BenchConfig {
    BenchConfig {
        sample_size,
        attempts_per_problem: attempts,
        seed,
    }
}

#[test]
fn two_of_four_solved_is_half() {
    let streams = vec![vec![GOOD], vec![BAD], vec![SORRY, GOOD], vec![SORRY]];
    let r = run_benchmark(&items(4), &cfg(4, 1, 0), &prover(&streams), &verifier(), 2).unwrap();
    assert_eq!(r.solved_count, 1);
    let r = run_benchmark(&items(4), &cfg(4, 2, 0), &prover(&streams), &verifier(), 2).unwrap();
    assert_eq!(r.solved_count, 2);
    assert_eq!(r.pass_rate, 0.5);
    let mut solved: Vec<_> = r.problems.iter().filter(|p| p.solved).map(|p| p.id.as_str()).collect();
    solved.sort();
    assert_eq!(solved, ["p1#1", "p3#1"]);
}

#[test]
fn sorry_and_ill_typed_proofs_never_count() {
    let v = verifier();
    let st = &items(1)[0].statement;
    let bad = attempt_proof(st, 1, &prover(&[vec![BAD]]), &v);
    assert!(!bad.solved);
    assert_eq!(bad.status, Some(VerificationStatus::Error));
    let sorry = attempt_proof(st, 1, &prover(&[vec![SORRY]]), &v);
    assert!(!sorry.solved);
    assert_eq!(sorry.status, Some(VerificationStatus::PassWithSorry));
    // altered header is rejected before verification
    let cheat = attempt_proof(st, 1, &prover(&[vec!["theorem p1 : True := trivial"]]), &v);
    assert!(!cheat.solved && cheat.candidate.is_none());
}

#[test]
fn samples_are_seeded() {
    let all = items(30);
    let streams: Vec<Vec<&str>> = (0..30).map(|i| vec![if i % 3 == 0 { GOOD } else { BAD }]).collect();
    let p = prover(&streams);
    let a = run_benchmark(&all, &cfg(10, 2, 42), &p, &verifier(), 4).unwrap();
    let b = run_benchmark(&all, &cfg(10, 2, 42), &p, &verifier(), 1).unwrap();
    assert_eq!(a, b);
    let c = run_benchmark(&all, &cfg(10, 2, 43), &p, &verifier(), 4).unwrap();
    let ids = |r: &ProverBenchResult| r.problems.iter().map(|p| p.id.clone()).collect::<Vec<_>>();
    assert_ne!(ids(&a), ids(&c));
}

#[test]
fn oversized_sample_and_zero_attempts_rejected() {
    let p = RecordedProver::new();
    assert!(matches!(
        run_benchmark(&items(3), &cfg(4, 1, 0), &p, &verifier(), 1),
        Err(BenchError::SampleTooLarge {
            requested: 4,
            available: 3
        })
    ));
    assert!(matches!(
        run_benchmark(&items(3), &cfg(3, 0, 0), &p, &verifier(), 1),
        Err(BenchError::NoAttempts)
    ));
}

fn reply() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec![GOOD, BAD, SORRY])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pass_rate_is_monotone_in_attempts(
        streams in prop::collection::vec(prop::collection::vec(reply(), 1..6), 1..8),
        attempts in 1u32..7,
    ) {
        let n = streams.len();
        let p = prover(&streams);
        let v = verifier();
        let full = run_benchmark(&items(n), &cfg(n, attempts, 5), &p, &v, 3).unwrap();

        let mut prev = 0.0;
        for k in 1..=attempts {
            let at_k = full.pass_rate_at(k);
            prop_assert!(at_k >= prev);
            prev = at_k;
            // pass@k read off the full run agrees with a fresh run capped at k
            let capped = run_benchmark(&items(n), &cfg(n, k, 5), &p, &v, 3).unwrap();
            prop_assert_eq!(capped.pass_rate, at_k);
        }
        prop_assert_eq!(full.pass_rate_at(attempts), full.pass_rate);

        for rec in &full.problems {
            let idx: usize = rec.id[1..rec.id.find('#').unwrap()].parse().unwrap();
            let s = &streams[idx - 1];
            let at = |k: u32| s[(k as usize - 1).min(s.len() - 1)];
            let want = (1..=attempts).find(|&k| at(k) == GOOD);
            prop_assert_eq!(rec.solving_attempt, want);
            if rec.solved {
                let proof = rec.proof.as_deref().unwrap();
                prop_assert_eq!(v.verify(proof).unwrap().status, VerificationStatus::Pass);
                prop_assert!(proof.starts_with(statement_header(&rec.statement)));
            } else {
                prop_assert_eq!(rec.attempts_made, attempts);
            }
        }
    }
}
