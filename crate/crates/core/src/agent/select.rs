//! Filter–select stages applied to a class's candidate pool.

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::numerics;

use super::{CandidateKind, PromptCandidate, PromptSet, SelectConfig};

/// Drops candidates judged non-visual. The bare candidate always survives.
pub fn sense_filter(candidates: Vec<PromptCandidate>) -> Vec<PromptCandidate> {
    candidates
        .into_iter()
        .filter(|c| c.visual || c.kind == CandidateKind::Bare)
        .collect()
}

fn check_pairs(candidates: &[PromptCandidate], embeddings: &[Embedding]) -> Result<()> {
    if candidates.len() != embeddings.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} embeddings",
            candidates.len(),
            embeddings.len()
        )));
    }
    Ok(())
}

/// Greedy near-duplicate removal in input order: a candidate is dropped when
/// its cosine with any already-kept candidate exceeds `threshold`.
pub fn dedup(
    candidates: Vec<PromptCandidate>,
    embeddings: Vec<Embedding>,
    threshold: f64,
) -> Result<(Vec<PromptCandidate>, Vec<Embedding>)> {
    check_pairs(&candidates, &embeddings)?;
    let mut kept_c: Vec<PromptCandidate> = Vec::new();
    let mut kept_e: Vec<Embedding> = Vec::new();
    for (cand, emb) in candidates.into_iter().zip(embeddings) {
        let mut duplicate = false;
        for k in &kept_e {
            if numerics::cosine(&emb.vector, &k.vector)? > threshold {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            kept_c.push(cand);
            kept_e.push(emb);
        }
    }
    Ok((kept_c, kept_e))
}

/// Farthest-point selection result with the gain at which each pick entered.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub gains: Vec<f64>,
}

/// Indices picked by farthest-point sampling over `embeddings`.
///
/// The first pick is the bare candidate (or index 0 if there is none). Each
/// further pick maximizes `min_s (1 - cos(candidate, s))` over the selected
/// set `s`, earliest index winning ties. Selection stops at `k_max` picks or
/// when the best gain drops below `min_gain`.
pub fn fps_indices(
    seed: usize,
    embeddings: &[Embedding],
    k_max: usize,
    min_gain: f64,
) -> Result<Selection> {
    if embeddings.is_empty() {
        return Err(Error::invalid("farthest-point sampling over an empty candidate list"));
    }
    let n = embeddings.len();
    let mut selected = vec![seed];
    let mut gains = vec![f64::INFINITY];
    let mut in_set = vec![false; n];
    in_set[seed] = true;
    // coverage[i] = min over selected s of (1 - cos(i, s))
    let mut coverage = vec![f64::INFINITY; n];
    let mut last = seed;
    while selected.len() < k_max.max(1) {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if in_set[i] {
                continue;
            }
            let d = 1.0 - numerics::cosine(&embeddings[i].vector, &embeddings[last].vector)?;
            coverage[i] = coverage[i].min(d);
            if best.is_none_or(|(_, g)| coverage[i] > g) {
                best = Some((i, coverage[i]));
            }
        }
        match best {
            Some((i, g)) if g >= min_gain => {
                in_set[i] = true;
                selected.push(i);
                gains.push(g);
                last = i;
            }
            _ => break,
        }
    }
    Ok(Selection {
        indices: selected,
        gains,
    })
}

pub fn fps_select(
    candidates: &[PromptCandidate],
    embeddings: &[Embedding],
    cfg: &SelectConfig,
) -> Result<PromptSet> {
    check_pairs(candidates, embeddings)?;
    if candidates.is_empty() {
        return Err(Error::invalid("fps_select needs at least one candidate"));
    }
    let seed = candidates
        .iter()
        .position(|c| c.kind == CandidateKind::Bare)
        .unwrap_or(0);
    let sel = fps_indices(seed, embeddings, cfg.k_max, cfg.coverage_gain_threshold)?;
    Ok(PromptSet {
        class_id: candidates[seed].class_id,
        prompts: sel.indices.iter().map(|&i| candidates[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::CandidateKind::*;

    fn cand(text: &str, kind: CandidateKind, visual: bool) -> PromptCandidate {
        PromptCandidate {
            text: text.into(),
            class_id: 0,
            kind,
            mode_tag: None,
            visual,
        }
    }

    fn emb(v: &[f64]) -> Embedding {
        Embedding::new(v, "p", 0).unwrap()
    }

    fn angle(deg: f64) -> Embedding {
        let r = deg.to_radians();
        emb(&[r.cos(), r.sin()])
    }

    #[test]
    fn sense_filter_cases() {
        let all = vec![cand("a", Bare, true), cand("a (x)", Disambiguation, true)];
        assert_eq!(sense_filter(all.clone()), all);

        let mixed = vec![
            cand("a", Bare, true),
            cand("a (x)", Disambiguation, false),
            cand("a (y)", Disambiguation, true),
        ];
        assert_eq!(sense_filter(mixed).len(), 2);

        let bare_nv = vec![cand("a", Bare, false), cand("a (x)", Disambiguation, false)];
        let out = sense_filter(bare_nv);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].kind, Bare);
    }

    #[test]
    fn dedup_cases() {
        let cs = vec![cand("a", Bare, true), cand("a", Expansion, true)];
        let (kept, _) = dedup(cs, vec![angle(0.0), angle(0.0)], 0.95).unwrap();
        assert_eq!(kept.len(), 1);

        let theta_096 = 0.96f64.acos().to_degrees();
        let cs = vec![cand("a", Bare, true), cand("b", Expansion, true)];
        let (kept, _) = dedup(cs.clone(), vec![angle(0.0), angle(theta_096)], 0.95).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].text, "a");

        let theta_090 = 0.90f64.acos().to_degrees();
        let (kept, _) = dedup(cs, vec![angle(0.0), angle(theta_090)], 0.95).unwrap();
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn dedup_length_mismatch_rejected() {
        assert!(dedup(vec![cand("a", Bare, true)], vec![], 0.95).is_err());
    }

    #[test]
    fn fps_single_candidate() {
        let cfg = SelectConfig::default();
        let set = fps_select(&[cand("a", Bare, true)], &[angle(10.0)], &cfg).unwrap();
        assert_eq!(set.k(), 1);
    }

    #[test]
    fn fps_caps_at_k_max() {
        let cfg = SelectConfig::default();
        let cands: Vec<_> = (0..10)
            .map(|i| cand(&format!("p{i}"), if i == 0 { Bare } else { Expansion }, true))
            .collect();
        let embs: Vec<_> = (0..10)
            .map(|i| {
                let mut v = vec![0.0; 10];
                v[i] = 1.0;
                emb(&v)
            })
            .collect();
        let set = fps_select(&cands, &embs, &cfg).unwrap();
        assert_eq!(set.k(), 4);
        let texts: Vec<_> = set.prompts.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["p0", "p1", "p2", "p3"]);
    }

    #[test]
    fn fps_stops_below_gain_threshold() {
        let cfg = SelectConfig::default();
        let cands = vec![
            cand("bare", Bare, true),
            cand("near", Expansion, true),
            cand("orth", Expansion, true),
        ];
        let embs = vec![angle(0.0), angle(20.0), angle(90.0)];
        let set = fps_select(&cands, &embs, &cfg).unwrap();
        let texts: Vec<_> = set.prompts.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["bare", "orth"]);
    }

    #[test]
    fn fps_seed_is_bare_even_when_not_first() {
        let cfg = SelectConfig::default();
        let cands = vec![cand("x", Expansion, true), cand("bare", Bare, true)];
        let set = fps_select(&cands, &[angle(90.0), angle(0.0)], &cfg).unwrap();
        assert_eq!(set.prompts[0].text, "bare");
    }

    #[test]
    fn fps_ties_go_to_earliest() {
        let cfg = SelectConfig::default();
        let cands = vec![
            cand("bare", Bare, true),
            cand("up", Expansion, true),
            cand("down", Expansion, true),
        ];
        let set = fps_select(&cands, &[angle(0.0), angle(90.0), angle(-90.0)], &cfg).unwrap();
        assert_eq!(set.prompts[1].text, "up");
    }

    #[test]
    fn fps_empty_rejected() {
        assert!(fps_select(&[], &[], &SelectConfig::default()).is_err());
    }
}
