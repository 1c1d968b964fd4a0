use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dialogue::DialogueTranscript;
use crate::goal::{normalize_value, UserGoal};

use super::{extract_expressed_entities, Extractor, MetricError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Set precision/recall of `predicted` against `reference`. An empty
    /// reference scores (1, 1, 1); an empty prediction against a non-empty
    /// reference scores (0, 0, 0).
    pub fn of_sets<T: Ord>(predicted: &BTreeSet<T>, reference: &BTreeSet<T>) -> Prf {
        if reference.is_empty() {
            return Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        if predicted.is_empty() {
            return Prf {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            };
        }
        let hit = predicted.intersection(reference).count() as f64;
        let precision = hit / predicted.len() as f64;
        let recall = hit / reference.len() as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// Entity P/R/F1 of the expressed entities against the goal's inform and
/// book slots.
pub fn entity_prf(expressed: &BTreeSet<(String, String)>, goal: &UserGoal) -> Prf {
    Prf::of_sets(expressed, &goal.entity_set())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FulfillmentReport {
    pub goal_id: String,
    pub completed: bool,
    pub succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub book_ok: Option<bool>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default)]
    pub group_accuracy: BTreeMap<String, bool>,
}

const BOOKING_WORDS: &[&str] = &["booked", "confirmed", "reserved", "scheduled"];

fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    let hay = normalize_value(haystack);
    let needle = normalize_value(phrase);
    !needle.is_empty() && hay.contains(&needle)
}

/// Goal fulfillment of one finished dialogue.
///
/// * completed: every inform/book value was expressed by the user and every
///   request slot was answered by the system (a system act carrying the
///   slot, or the slot named in a system utterance).
/// * book_ok (goals with book slots): a system `book` act whose entities
///   cover the book constraints, or a system utterance confirming a booking
///   that names every book value.
/// * succeeded: completed and book_ok (when defined).
pub fn evaluate_fulfillment(
    transcript: &DialogueTranscript,
    goal: &UserGoal,
    extractor: &dyn Extractor,
) -> Result<FulfillmentReport, MetricError> {
    if !transcript.is_terminated() {
        return Err(MetricError::NotTerminated(transcript.dialogue_id.clone()));
    }
    let expressed = extract_expressed_entities(transcript, extractor)?;
    let goal_entities = goal.entity_set();
    let informed = goal_entities.is_subset(&expressed);

    let requests_answered = goal.request_slots().all(|slot| {
        let key = slot.key();
        transcript.system_utterances().any(|u| {
            u.acts
                .iter()
                .flatten()
                .any(|a| a.entities.iter().any(|(k, v)| k == &key && !v.trim().is_empty()))
                || contains_phrase(&u.text, &slot.phrase())
        })
    });
    let completed = informed && requests_answered;

    let book_constraints: BTreeSet<(String, String)> = goal
        .book_slots()
        .map(|s| (s.key(), s.value.clone().unwrap_or_default()))
        .collect();
    let book_ok = (!book_constraints.is_empty()).then(|| {
        transcript.system_utterances().any(|u| {
            let by_acts = u.acts.iter().flatten().any(|a| {
                a.intent == "book"
                    && book_constraints
                        .iter()
                        .all(|(k, v)| a.entities.iter().any(|(ak, av)| ak == k && &normalize_value(av) == v))
            });
            let text = normalize_value(&u.text);
            let by_text = BOOKING_WORDS.iter().any(|w| text.contains(w))
                && book_constraints.iter().all(|(_, v)| text.contains(v.as_str()));
            by_acts || by_text
        })
    });

    let mut group_accuracy = BTreeMap::new();
    for slot in goal.valued_slots() {
        if let Some(group) = &slot.group {
            let ok = expressed.contains(&(slot.key(), slot.value.clone().unwrap_or_default()));
            let entry = group_accuracy.entry(group.clone()).or_insert(true);
            *entry &= ok;
        }
    }

    let prf = entity_prf(&expressed, goal);
    Ok(FulfillmentReport {
        goal_id: goal.id().to_string(),
        completed,
        succeeded: completed && book_ok.unwrap_or(true),
        book_ok,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        group_accuracy,
    })
}

/// Campaign-level goal fulfillment: rates are fractions of dialogues, the
/// book rate covers only dialogues with booking constraints, P/R/F1 are
/// per-dialogue means and group accuracies are percentages over the
/// dialogues whose goal has the group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignTable {
    pub dialogues: usize,
    pub completion_rate: f64,
    pub success_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub book_rate: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default)]
    pub group_accuracy: BTreeMap<String, f64>,
}

pub fn aggregate_campaign(reports: &[FulfillmentReport]) -> Result<CampaignTable, MetricError> {
    if reports.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n = reports.len() as f64;
    let rate = |f: fn(&FulfillmentReport) -> bool| reports.iter().filter(|r| f(r)).count() as f64 / n;
    let mean = |f: fn(&FulfillmentReport) -> f64| reports.iter().map(f).sum::<f64>() / n;

    let booked: Vec<bool> = reports.iter().filter_map(|r| r.book_ok).collect();
    let book_rate = (!booked.is_empty()).then(|| booked.iter().filter(|&&b| b).count() as f64 / booked.len() as f64);

    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for report in reports {
        for (group, &ok) in &report.group_accuracy {
            let entry = groups.entry(group.clone()).or_default();
            entry.0 += ok as usize;
            entry.1 += 1;
        }
    }
    Ok(CampaignTable {
        dialogues: reports.len(),
        completion_rate: rate(|r| r.completed),
        success_rate: rate(|r| r.succeeded),
        book_rate,
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
        group_accuracy: groups
            .into_iter()
            .map(|(g, (ok, total))| (g, 100.0 * ok as f64 / total as f64))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{DialogueAct, Termination};
    use crate::goal::SlotSpec;
    use crate::metrics::{ActsExtractor, LexicalExtractor};
    use approx::assert_abs_diff_eq;

    fn set(items: &[&str]) -> BTreeSet<(String, String)> {
        items.iter().map(|s| (s.to_string(), "v".to_string())).collect()
    }

    fn goal_abc() -> UserGoal {
        UserGoal::new(
            "g",
            None,
            None,
            ["a", "b", "c"].iter().map(|n| SlotSpec::inform("d", n, "v")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn prf_cases() {
        let goal = goal_abc();
        let full = set(&["d.a", "d.b", "d.c"]);
        assert_eq!(
            entity_prf(&full, &goal),
            Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
        let partial = entity_prf(&set(&["d.a", "d.b", "d.x"]), &goal);
        assert_abs_diff_eq!(partial.precision, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(partial.recall, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(partial.f1, 2.0 / 3.0, epsilon = 1e-12);
        let one = UserGoal::new("g", None, None, vec![SlotSpec::inform("d", "a", "v")]).unwrap();
        assert_eq!(
            entity_prf(&BTreeSet::new(), &one),
            Prf {
                precision: 0.0,
                recall: 0.0,
                f1: 0.0
            }
        );
        let empty = UserGoal::new("g", None, None, vec![]).unwrap();
        assert_eq!(
            entity_prf(&set(&["d.a"]), &empty),
            Prf {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0
            }
        );
    }

    #[test]
    fn inform_only_goal_completes_and_succeeds() {
        let goal = UserGoal::new("g", None, None, vec![SlotSpec::inform("restaurant", "food", "indian")]).unwrap();
        let mut t = DialogueTranscript::from_texts("d", "g", &["hi", "indian food please"]).unwrap();
        t.terminate(Termination::AgentEnd).unwrap();
        let r = evaluate_fulfillment(&t, &goal, &LexicalExtractor::from_goal(&goal)).unwrap();
        assert!(r.completed && r.succeeded);
        assert_eq!(r.book_ok, None);
    }

    #[test]
    fn requests_and_bookings() {
        let goal = UserGoal::new(
            "g",
            None,
            None,
            vec![
                SlotSpec::book("restaurant", "people", "2"),
                SlotSpec::request("restaurant", "postcode"),
            ],
        )
        .unwrap();
        let mut t = DialogueTranscript::from_texts(
            "d",
            "g",
            &[
                "hi",
                "a table for 2 and the postcode?",
                "booked for 2 people, the postcode is cb21ab",
            ],
        )
        .unwrap();
        t.terminate(Termination::SystemEnd).unwrap();
        let r = evaluate_fulfillment(&t, &goal, &LexicalExtractor::from_goal(&goal)).unwrap();
        assert!(r.completed);
        assert_eq!(r.book_ok, Some(true));
        assert!(r.succeeded);

        let mut unanswered = DialogueTranscript::from_texts("d", "g", &["hi", "a table for 2", "done"]).unwrap();
        unanswered.terminate(Termination::SystemEnd).unwrap();
        let r = evaluate_fulfillment(&unanswered, &goal, &LexicalExtractor::from_goal(&goal)).unwrap();
        assert!(!r.completed && !r.succeeded);
        assert_eq!(r.book_ok, Some(false));
    }

    #[test]
    fn booking_via_acts() {
        let goal = UserGoal::new("g", None, None, vec![SlotSpec::book("hotel", "stay", "3")]).unwrap();
        let mut t = DialogueTranscript::from_texts("d", "g", &["hi", "3 nights", "ok"]).unwrap();
        t.annotate_last_user(vec![DialogueAct::new("inform").with_entity("hotel.stay", "3")]);
        let mut t2 = DialogueTranscript::new("d", "g");
        for u in t.utterances().iter().cloned() {
            let u = if u.text == "ok" {
                u.with_acts(vec![DialogueAct::new("book").with_entity("hotel.stay", "3")])
            } else {
                u
            };
            t2.append(u).unwrap();
        }
        t2.terminate(Termination::SystemEnd).unwrap();
        let r = evaluate_fulfillment(&t2, &goal, &ActsExtractor).unwrap();
        assert_eq!(r.book_ok, Some(true));
        assert!(r.succeeded);
    }

    #[test]
    fn unterminated_rejected() {
        let goal = goal_abc();
        let t = DialogueTranscript::from_texts("d", "g", &["hi"]).unwrap();
        assert!(matches!(
            evaluate_fulfillment(&t, &goal, &LexicalExtractor::from_goal(&goal)),
            Err(MetricError::NotTerminated(_))
        ));
    }

    fn report(completed: bool, succeeded: bool) -> FulfillmentReport {
        FulfillmentReport {
            goal_id: "g".into(),
            completed,
            succeeded,
            book_ok: None,
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            group_accuracy: BTreeMap::new(),
        }
    }

    #[test]
    fn aggregate_rates() {
        let t = aggregate_campaign(&[report(true, true), report(true, false)]).unwrap();
        assert_eq!(t.success_rate, 0.5);
        assert_eq!(t.completion_rate, 1.0);
        assert_eq!(t.book_rate, None);
        let perfect: Vec<_> = (0..100).map(|_| report(true, true)).collect();
        let t = aggregate_campaign(&perfect).unwrap();
        assert_eq!((t.completion_rate, t.success_rate, t.f1), (1.0, 1.0, 1.0));
        assert!(matches!(aggregate_campaign(&[]), Err(MetricError::EmptyInput)));
    }

    #[test]
    fn aggregate_book_rate_and_groups() {
        let mut a = report(true, true);
        a.book_ok = Some(true);
        a.group_accuracy.insert("car_info".into(), true);
        let mut b = report(true, false);
        b.book_ok = Some(false);
        b.group_accuracy.insert("car_info".into(), false);
        let c = report(false, false);
        let t = aggregate_campaign(&[a, b, c]).unwrap();
        assert_eq!(t.book_rate, Some(0.5));
        assert_eq!(t.group_accuracy["car_info"], 50.0);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(keys: &BTreeSet<u8>) -> BTreeSet<(String, String)> {
        keys.iter().map(|k| (format!("d.s{k}"), "v".to_string())).collect()
    }

    proptest! {
        #[test]
        fn subset_laws(goal_keys in proptest::collection::btree_set(0u8..10, 1..6),
                       extra in proptest::collection::btree_set(10u8..20, 0..4),
                       drop in 0usize..6) {
            let goal_set = pairs(&goal_keys);
            let slots = goal_set.iter().map(|(k, _)| crate::goal::SlotSpec::inform("d", &k[2..], "v")).collect();
            let goal = UserGoal::new("g", None, None, slots).unwrap();
            // subset of the goal: precision 1
            let mut sub = goal_set.clone();
            if let Some(first) = sub.iter().nth(drop % sub.len()).cloned() {
                if sub.len() > 1 { sub.remove(&first); }
            }
            prop_assert_eq!(entity_prf(&sub, &goal).precision, 1.0);
            // superset of the goal: recall 1
            let mut sup = goal_set.clone();
            sup.extend(pairs(&extra));
            prop_assert_eq!(entity_prf(&sup, &goal).recall, 1.0);
        }

        #[test]
        fn success_never_exceeds_completion(flags in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..30)) {
            let reports: Vec<_> = flags.iter().map(|&(c, s)| FulfillmentReport {
                goal_id: "g".into(), completed: c, succeeded: c && s, book_ok: None,
                precision: 1.0, recall: 1.0, f1: 1.0, group_accuracy: BTreeMap::new(),
            }).collect();
            let t = aggregate_campaign(&reports).unwrap();
            prop_assert!(t.success_rate <= t.completion_rate);
        }
    }
}
