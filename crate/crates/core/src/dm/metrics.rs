use super::{DmError, HcnModel};
use crate::data::{ActionId, Dialogue, Vocabulary};
use crate::embeddings::EmbeddingTable;

fn hit(pred: ActionId, gold: ActionId) -> bool {
    gold.is_known() && pred == gold
}

/// Fraction of turns predicted correctly. Unknown golds always count as
/// misses; an empty input scores 0.
pub fn turn_accuracy(predictions: &[ActionId], golds: &[ActionId]) -> Result<f64, DmError> {
    if predictions.len() != golds.len() {
        return Err(DmError::Usage(format!("{} predictions for {} gold turns", predictions.len(), golds.len())));
    }
    if golds.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions.iter().zip(golds).filter(|(&p, &g)| hit(p, g)).count();
    Ok(hits as f64 / golds.len() as f64)
}

/// Fraction of dialogues whose every turn is correct; `lengths` gives the
/// number of turns of each consecutive dialogue.
pub fn dialogue_accuracy(predictions: &[ActionId], golds: &[ActionId], lengths: &[usize]) -> Result<f64, DmError> {
    if predictions.len() != golds.len() || lengths.iter().sum::<usize>() != golds.len() {
        return Err(DmError::Usage("predictions, golds and dialogue lengths disagree".into()));
    }
    if lengths.is_empty() {
        return Ok(0.0);
    }
    let mut start = 0;
    let mut correct = 0;
    for &n in lengths {
        let end = start + n;
        if (start..end).all(|i| hit(predictions[i], golds[i])) {
            correct += 1;
        }
        start = end;
    }
    Ok(correct as f64 / lengths.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Predicted action per turn, per dialogue.
    pub predictions: Vec<Vec<ActionId>>,
    pub turn_accuracy: f64,
    pub dialogue_accuracy: f64,
}

/// Runs each dialogue from a fresh state through [`HcnModel::forward_turn`].
pub fn evaluate(
    model: &HcnModel,
    dialogues: &[Dialogue],
    table: &EmbeddingTable,
    vocab: &Vocabulary,
) -> Result<Evaluation, DmError> {
    let mut predictions = Vec::with_capacity(dialogues.len());
    for d in dialogues {
        let mut state = model.initial_state();
        let mut preds = Vec::with_capacity(d.turns.len());
        for turn in &d.turns {
            let out = model.forward_turn(&turn.user_tokens, &state, None, table, vocab)?;
            preds.push(out.action);
            state = out.state;
        }
        predictions.push(preds);
    }
    let flat: Vec<ActionId> = predictions.iter().flatten().copied().collect();
    let golds: Vec<ActionId> = dialogues.iter().flat_map(|d| d.turns.iter().map(|t| t.gold_action)).collect();
    let lengths: Vec<usize> = dialogues.iter().map(|d| d.turns.len()).collect();
    Ok(Evaluation {
        turn_accuracy: turn_accuracy(&flat, &golds)?,
        dialogue_accuracy: dialogue_accuracy(&flat, &golds, &lengths)?,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(xs: &[usize]) -> Vec<ActionId> {
        xs.iter().map(|&x| ActionId(x)).collect()
    }

    #[test]
    fn all_and_none_correct() {
        let g = ids(&[1, 2, 3]);
        assert_eq!(turn_accuracy(&g, &g).unwrap(), 1.0);
        assert_eq!(turn_accuracy(&ids(&[0, 0, 0]), &g).unwrap(), 0.0);
        assert_eq!(dialogue_accuracy(&g, &g, &[2, 1]).unwrap(), 1.0);
    }

    #[test]
    fn seven_turn_fixture_with_four_hits() {
        let gold = ids(&[0, 1, 2, 3, 4, 5, 6]);
        let pred = ids(&[0, 9, 2, 9, 4, 5, 9]);
        assert_eq!(turn_accuracy(&pred, &gold).unwrap(), 4.0 / 7.0);
    }

    #[test]
    fn two_dialogues_one_correct() {
        let gold = ids(&[0, 1, 2, 3, 4]);
        let pred = ids(&[0, 1, 2, 3, 0]);
        assert_eq!(dialogue_accuracy(&pred, &gold, &[3, 2]).unwrap(), 0.5);
    }

    #[test]
    fn unknown_gold_is_always_a_miss() {
        let gold = vec![ActionId::UNKNOWN, ActionId(1)];
        assert_eq!(turn_accuracy(&gold, &gold).unwrap(), 0.5);
        assert_eq!(dialogue_accuracy(&gold, &gold, &[1, 1]).unwrap(), 0.5);
    }

    #[test]
    fn length_mismatch_is_usage_error() {
        assert!(matches!(turn_accuracy(&ids(&[1]), &ids(&[1, 2])), Err(DmError::Usage(_))));
        assert!(matches!(dialogue_accuracy(&ids(&[1, 2]), &ids(&[1, 2]), &[3]), Err(DmError::Usage(_))));
    }

    #[test]
    fn dominance_needs_comparable_lengths() {
        // one short correct dialogue outweighs a long wrong one
        let gold = ids(&[0; 11]);
        let mut pred = ids(&[1; 11]);
        pred[0] = ActionId(0);
        let t = turn_accuracy(&pred, &gold).unwrap();
        let d = dialogue_accuracy(&pred, &gold, &[1, 10]).unwrap();
        assert!(d > t);
    }

    proptest! {
        #[test]
        fn equal_length_dialogue_accuracy_never_exceeds_turn_accuracy(
            len in 1usize..6,
            count in 1usize..8,
            seed in any::<u64>(),
        ) {
            let n = len * count;
            let gold: Vec<ActionId> = (0..n).map(|i| ActionId((seed as usize >> (i % 48)) % 3)).collect();
            let pred: Vec<ActionId> = (0..n).map(|i| ActionId((seed as usize >> ((i * 7) % 48)) % 3)).collect();
            let t = turn_accuracy(&pred, &gold).unwrap();
            let d = dialogue_accuracy(&pred, &gold, &vec![len; count]).unwrap();
            prop_assert!(d <= t + 1e-15);
        }
    }
}
