use std::collections::BTreeMap;

use super::{PromptBundle, PromptError};
use crate::model::ModelError;

/// Provider-independent size estimate: characters / 4, rounded up, over the
/// system and user text together.
pub fn estimate_tokens(system_text: &str, user_text: &str) -> usize {
    (system_text.chars().count() + user_text.chars().count()).div_ceil(4)
}

/// Drops prompt elements until the bundle fits `budget`: oldest prior beats
/// first, then oldest memories, then character descriptions. Everything else
/// (premise, traits, goals, situation, nudge, instructions) is kept.
///
/// A bundle already within budget is returned unchanged.
pub fn truncate_context(bundle: &PromptBundle, budget: usize) -> Result<PromptBundle, PromptError> {
    if budget == 0 {
        return Err(ModelError::ZeroContextBudget.into());
    }
    let system_chars = bundle.system_text.chars().count();
    let full_chars = system_chars + bundle.user_text.chars().count();
    if full_chars.div_ceil(4) <= budget {
        return Ok(bundle.clone());
    }

    let mut order: Vec<(u8, usize)> = bundle
        .elements
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.role.drop_priority().map(|p| (p, i)))
        .collect();
    order.sort();

    // Dropping an element removes its line; dropping the last element of a
    // block also removes the block header and one blank separator line.
    let mut per_block: BTreeMap<u32, usize> = BTreeMap::new();
    for e in &bundle.elements {
        *per_block.entry(e.block).or_default() += 1;
    }
    let mut live_blocks = per_block.len();
    let mut chars = full_chars;
    let drop_cost = |i: usize, per_block: &mut BTreeMap<u32, usize>, live_blocks: &mut usize| {
        let e = &bundle.elements[i];
        let mut cost = e.text.chars().count() + 1;
        let left = per_block.get_mut(&e.block).expect("block counted");
        *left -= 1;
        if *left == 0 {
            *live_blocks -= 1;
            cost += e.block_title.chars().count() + 7;
            if *live_blocks > 0 {
                cost += 1;
            }
        }
        cost
    };

    let core_chars = {
        let mut blocks = per_block.clone();
        let mut live = live_blocks;
        order
            .iter()
            .fold(full_chars, |acc, &(_, i)| acc - drop_cost(i, &mut blocks, &mut live))
    };
    if core_chars.div_ceil(4) > budget {
        return Err(PromptError::BudgetUnsatisfiable {
            needed: core_chars.div_ceil(4),
            budget,
        });
    }

    let mut dropped = vec![false; bundle.elements.len()];
    for &(_, i) in &order {
        if chars.div_ceil(4) <= budget {
            break;
        }
        chars -= drop_cost(i, &mut per_block, &mut live_blocks);
        dropped[i] = true;
    }

    let mut out = bundle.clone();
    out.elements.clear();
    for (e, gone) in bundle.elements.iter().zip(&dropped) {
        if *gone {
            out.dropped_sections.push(e.manifest_entry());
        } else {
            out.elements.push(e.clone());
        }
    }
    out.rerender();
    debug_assert_eq!(system_chars + out.user_text.chars().count(), chars);
    Ok(out)
}
