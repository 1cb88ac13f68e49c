use std::io::Write;

use rand::Rng;

use super::scoring::{assemble_news, assemble_user, nce_loss, score};
use super::*;
use crate::config::{Ablation, ModelConfig};
use crate::data::{load_news, NewsArticle, NewsTable};
use crate::graph::{NeighborRow, NeighborTables};
use crate::tensor::{finite_difference_check, FdOptions, Tape};
use crate::train::TrainingSample;

fn fixture_cfg() -> ModelConfig {
    ModelConfig {
        title_len: 6,
        max_history: 4,
        neighbors: 3,
        heads: 2,
        attn_out_dim: 8,
        word_dim: 5,
        topic_dim: 4,
        id_dim: 6,
        attn_hidden: 7,
        common_dim: 5,
        neg_ratio: 2,
        dropout: 0.0,
        batch_size: 4,
        learning_rate: 1e-3,
        epochs: 1,
        ablation: Ablation::default(),
    }
}

fn fixture_news(title_len: usize) -> NewsTable {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(
        b"n1\tt1\taa bb cc\n\
          n2\tt2\tdd ee\n\
          n3\tt1\tbb dd\n\
          n4\tt3\tcc\n\
          n5\tt2\tee aa bb dd\n\
          n6\tt1\taa\n",
    )
    .unwrap();
    load_news(f.path(), title_len).unwrap()
}

fn fixture_tables(width: usize) -> NeighborTables {
    let users = vec![
        NeighborRow::padded(width),
        NeighborRow::from_ids(&[2], width),
        NeighborRow::from_ids(&[1, 3], width),
        NeighborRow::from_ids(&[2], width),
        NeighborRow::padded(width), // cold user
    ];
    let news = vec![
        NeighborRow::padded(width),
        NeighborRow::from_ids(&[3, 5], width),
        NeighborRow::from_ids(&[5], width),
        NeighborRow::from_ids(&[1], width),
        NeighborRow::padded(width), // cold news
        NeighborRow::from_ids(&[1, 2, 3], width),
        NeighborRow::from_ids(&[5], width),
    ];
    NeighborTables { width, users, news }
}

struct Fixture {
    params: ModelParams<f64>,
    news: NewsTable,
    tables: NeighborTables,
}

fn fixture() -> Fixture {
    fixture_with(fixture_cfg())
}

fn fixture_with(cfg: ModelConfig) -> Fixture {
    let news = fixture_news(cfg.title_len);
    let sizes =
        CorpusSizes { vocab: news.vocab.len(), topics: news.topics.len(), users: 4, news: 6 };
    let params = ModelParams::<f64>::init(&cfg, sizes, 7, None).unwrap();
    let tables = fixture_tables(cfg.neighbors);
    Fixture { params, news, tables }
}

fn fwd(fx: &Fixture) -> Forward<'_, f64> {
    Forward::new(&fx.params, &fx.news, &fx.tables, false, 0)
}

fn zero_param(params: &mut ModelParams<f64>, name: &str) {
    let id = params.store.by_name(name).unwrap();
    let n = params.store.get(id).len();
    params.store.set_data(id, vec![0.0; n]);
}

fn get_matrix(params: &ModelParams<f64>, name: &str) -> (usize, usize, Vec<f64>) {
    let id = params.store.by_name(name).unwrap();
    let p = params.store.get(id);
    (p.rows, p.cols, p.data.as_ref().clone())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------
// Independent naive-loop re-implementation of the news encoder,
// straight from the formulas with scalar loops.
// ---------------------------------------------------------------

fn naive_softmax(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let mx = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = vec![0.0; scores.len()];
    let mut sum = 0.0;
    for i in 0..scores.len() {
        if mask[i] {
            out[i] = (scores[i] - mx).exp();
            sum += out[i];
        }
    }
    for v in &mut out {
        *v /= sum;
    }
    out
}

fn naive_encode(params: &ModelParams<f64>, art: &NewsArticle) -> Vec<f64> {
    let cfg = &params.cfg;
    let m = art.tokens.len();
    let wd = cfg.word_dim;
    let (_, _, word_emb) = get_matrix(params, "word_emb");
    let embed =
        |t: u32| word_emb[t as usize * wd..(t as usize + 1) * wd].to_vec();
    let e: Vec<Vec<f64>> = art.tokens.iter().map(|&t| embed(t)).collect();

    let hd = cfg.head_dim();
    let mut h = vec![vec![0.0; cfg.attn_out_dim]; m];
    for k in 0..cfg.heads {
        let (_, _, w_s) = get_matrix(params, &format!("news.self_attn.w_s.{k}"));
        let (_, _, w_v) = get_matrix(params, &format!("news.self_attn.w_v.{k}"));
        for i in 0..m {
            // logits_ij = e_i^T W_s e_j over valid j
            let mut ei_w = vec![0.0; wd];
            for a in 0..wd {
                for b in 0..wd {
                    ei_w[b] += e[i][a] * w_s[a * wd + b];
                }
            }
            let scores: Vec<f64> =
                (0..m).map(|j| (0..wd).map(|b| ei_w[b] * e[j][b]).sum()).collect();
            let alpha = naive_softmax(&scores, &art.mask);
            let mut ctx = vec![0.0; wd];
            for j in 0..m {
                for b in 0..wd {
                    ctx[b] += alpha[j] * e[j][b];
                }
            }
            for c in 0..hd {
                let mut s = 0.0;
                for b in 0..wd {
                    s += ctx[b] * w_v[b * hd + c];
                }
                h[i][k * hd + c] = s;
            }
        }
    }

    let a_dim = cfg.attn_hidden;
    let (_, _, w_attn) = get_matrix(params, "news.word_attn.w");
    let (_, _, b_attn) = get_matrix(params, "news.word_attn.b");
    let (_, _, q_attn) = get_matrix(params, "news.word_attn.q");
    let scores: Vec<f64> = (0..m)
        .map(|i| {
            let mut s = 0.0;
            for x in 0..a_dim {
                let mut t = b_attn[x];
                for y in 0..cfg.attn_out_dim {
                    t += h[i][y] * w_attn[y * a_dim + x];
                }
                s += t.tanh() * q_attn[x];
            }
            s
        })
        .collect();
    let beta = naive_softmax(&scores, &art.mask);
    let mut v_t = vec![0.0; cfg.attn_out_dim];
    for i in 0..m {
        for y in 0..cfg.attn_out_dim {
            v_t[y] += beta[i] * h[i][y];
        }
    }

    let (_, td, topic_emb) = get_matrix(params, "topic_emb");
    let mut out = v_t;
    out.extend_from_slice(&topic_emb[art.topic as usize * td..(art.topic as usize + 1) * td]);
    out
}

#[test]
fn encoder_matches_naive_loop_oracle() {
    let fx = fixture();
    for idx in 1..=6u32 {
        let mut f = fwd(&fx);
        let got = f.encode_news(idx).unwrap().to_vec();
        let want = naive_encode(&fx.params, fx.news.article(idx));
        assert!(max_abs_diff(&got, &want) < 1e-10, "news {idx}");
    }
}

#[test]
fn single_token_title_attends_to_itself() {
    let fx = fixture();
    let mut f = fwd(&fx);
    f.enable_trace();
    let idx = fx.news.lookup("n4").unwrap(); // one-word title
    let _ = f.encode_news(idx).unwrap();
    let trace = f.trace.take().unwrap();
    for (site, weights, mask) in &trace.entries {
        if *site == AttnSite::SelfAttn {
            for (w, m) in weights.iter().zip(mask) {
                if *m {
                    assert!((w - 1.0).abs() < 1e-12);
                } else {
                    assert_eq!(*w, 0.0);
                }
            }
        }
    }
    // v_t equals h_1: the word attention has a single valid slot.
    let art = fx.news.article(idx);
    let mut f2 = fwd(&fx);
    let token_ids: Vec<usize> = art.tokens.iter().map(|&t| t as usize).collect();
    let e = f2.staged().word_emb.gather(&token_ids).unwrap();
    let h = f2.self_attention(&e, &art.mask).unwrap();
    let v = f2.word_attention(&h, &art.mask).unwrap();
    assert!(max_abs_diff(&v.to_vec(), &h.to_vec()[..fx.params.cfg.attn_out_dim]) < 1e-12);
}

#[test]
fn zero_bilinear_weights_give_uniform_attention_and_mean_heads() {
    let mut fx = fixture();
    zero_param(&mut fx.params, "news.self_attn.w_s.0");
    zero_param(&mut fx.params, "news.self_attn.w_s.1");
    let idx = fx.news.lookup("n1").unwrap(); // 3 valid tokens
    let art = fx.news.article(idx);

    let mut f = fwd(&fx);
    let token_ids: Vec<usize> = art.tokens.iter().map(|&t| t as usize).collect();
    let e = f.staged().word_emb.gather(&token_ids).unwrap();
    let h = f.self_attention(&e, &art.mask).unwrap().to_vec();

    // Expected head output: mean of valid embeddings through each W_v.
    let (_, wd, word_emb) = get_matrix(&fx.params, "word_emb");
    let mut mean_e = vec![0.0; wd];
    let n_valid = art.n_tokens as f64;
    for (i, &valid) in art.mask.iter().enumerate() {
        if valid {
            let t = art.tokens[i] as usize;
            for b in 0..wd {
                mean_e[b] += word_emb[t * wd + b] / n_valid;
            }
        }
    }
    let hd = fx.params.cfg.head_dim();
    for k in 0..fx.params.cfg.heads {
        let (_, _, w_v) = get_matrix(&fx.params, &format!("news.self_attn.w_v.{k}"));
        for c in 0..hd {
            let want: f64 = (0..wd).map(|b| mean_e[b] * w_v[b * hd + c]).sum();
            // Every valid row carries the same head output.
            for (i, &valid) in art.mask.iter().enumerate() {
                if valid {
                    let got = h[i * fx.params.cfg.attn_out_dim + k * hd + c];
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn zero_query_word_attention_is_masked_mean() {
    let mut fx = fixture();
    zero_param(&mut fx.params, "news.word_attn.q");
    let idx = fx.news.lookup("n5").unwrap();
    let art = fx.news.article(idx);
    let mut f = fwd(&fx);
    let token_ids: Vec<usize> = art.tokens.iter().map(|&t| t as usize).collect();
    let e = f.staged().word_emb.gather(&token_ids).unwrap();
    let h = f.self_attention(&e, &art.mask).unwrap();
    let v = f.word_attention(&h, &art.mask).unwrap().to_vec();

    let hv = h.to_vec();
    let d = fx.params.cfg.attn_out_dim;
    let n_valid = art.n_tokens as f64;
    for c in 0..d {
        let mean: f64 = art
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| hv[i * d + c])
            .sum::<f64>()
            / n_valid;
        assert!((v[c] - mean).abs() < 1e-12);
    }
}

#[test]
fn encode_news_layout_and_topic_independence() {
    let fx = fixture();
    let mut f = fwd(&fx);
    let n1 = fx.news.lookup("n1").unwrap();
    let v = f.encode_news(n1).unwrap().to_vec();
    let art = fx.news.article(n1);
    let (_, td, topic_emb) = get_matrix(&fx.params, "topic_emb");
    let topic_row = &topic_emb[art.topic as usize * td..(art.topic as usize + 1) * td];
    assert_eq!(&v[fx.params.cfg.attn_out_dim..], topic_row, "tail is the topic row");

    // Same tokens, different topic: title part unchanged.
    let mut clone = NewsArticle {
        id: "x".into(),
        topic: (art.topic + 1) % fx.news.topics.len() as u32,
        tokens: art.tokens.clone(),
        mask: art.mask.clone(),
        n_tokens: art.n_tokens,
    };
    let mut f2 = fwd(&fx);
    let v2 = f2.encode_article(&clone).unwrap().to_vec();
    let d = fx.params.cfg.attn_out_dim;
    assert!(max_abs_diff(&v[..d], &v2[..d]) < 1e-12);
    assert!(max_abs_diff(&v[d..], &v2[d..]) > 0.0, "topic tail must differ");

    // Randomizing padded-slot contents changes nothing.
    let mut rng = crate::rng::chacha(1);
    for (i, m) in clone.mask.clone().iter().enumerate() {
        if !m {
            clone.tokens[i] = rng.gen_range(2..fx.news.vocab.len() as u32);
        }
    }
    clone.topic = art.topic;
    let mut f3 = fwd(&fx);
    let v3 = f3.encode_article(&clone).unwrap().to_vec();
    assert!(max_abs_diff(&v, &v3) < 1e-12, "pad contents leaked into the encoding");
}

#[test]
fn trailing_pad_count_does_not_matter() {
    let fx6 = fixture();
    let news10 = fixture_news(10);
    let idx = fx6.news.lookup("n1").unwrap();
    let mut f6 = fwd(&fx6);
    let narrow = f6.encode_news(idx).unwrap().to_vec();
    let mut f10 = Forward::new(&fx6.params, &news10, &fx6.tables, false, 0);
    let wide = f10.encode_news(news10.lookup("n1").unwrap()).unwrap().to_vec();
    assert!(max_abs_diff(&narrow, &wide) < 1e-10);
}

#[test]
fn empty_title_is_degenerate() {
    let fx = fixture();
    let empty = NewsArticle {
        id: "e".into(),
        topic: 0,
        tokens: vec![0; 6],
        mask: vec![false; 6],
        n_tokens: 0,
    };
    let mut f = fwd(&fx);
    assert!(matches!(f.encode_article(&empty), Err(crate::error::Error::DegenerateRow { .. })));
}

#[test]
fn token_permutation_leaves_pooled_title_unchanged_with_zero_query() {
    let mut fx = fixture();
    zero_param(&mut fx.params, "news.word_attn.q");
    let idx = fx.news.lookup("n5").unwrap();
    let art = fx.news.article(idx);
    let mut permuted = NewsArticle {
        id: "p".into(),
        topic: art.topic,
        tokens: art.tokens.clone(),
        mask: art.mask.clone(),
        n_tokens: art.n_tokens,
    };
    permuted.tokens[..art.n_tokens].reverse();
    let mut f1 = fwd(&fx);
    let a = f1.encode_article(art).unwrap().to_vec();
    let mut f2 = fwd(&fx);
    let b = f2.encode_article(&permuted).unwrap().to_vec();
    assert!(max_abs_diff(&a, &b) < 1e-10);
}

// ---------------------------------------------------------------
// One-hop
// ---------------------------------------------------------------

#[test]
fn candidate_semantic_delegates_to_the_encoder() {
    let fx = fixture();
    let mut f = fwd(&fx);
    let n3 = fx.news.lookup("n3").unwrap();
    let a = f.candidate_semantic(n3).unwrap().to_vec();
    let b = f.encode_news(n3).unwrap().to_vec();
    assert_eq!(a, b);
}

#[test]
fn user_semantic_single_click_is_that_news() {
    let fx = fixture();
    let mut f = fwd(&fx);
    let n2 = fx.news.lookup("n2").unwrap();
    let u = f.user_semantic(&[n2]).unwrap().to_vec();
    let v = f.encode_news(n2).unwrap().to_vec();
    assert!(max_abs_diff(&u, &v) < 1e-12);
}

#[test]
fn user_semantic_zero_query_is_mean() {
    let mut fx = fixture();
    zero_param(&mut fx.params, "user.clicked_attn.q");
    let mut f = fwd(&fx);
    let history = [1u32, 2, 3];
    let u = f.user_semantic(&history).unwrap().to_vec();
    let encoded: Vec<Vec<f64>> =
        history.iter().map(|&n| f.encode_news(n).unwrap().to_vec()).collect();
    for c in 0..u.len() {
        let mean: f64 = encoded.iter().map(|v| v[c]).sum::<f64>() / 3.0;
        assert!((u[c] - mean).abs() < 1e-12);
    }
}

#[test]
fn empty_history_is_zero_vector() {
    let fx = fixture();
    let mut f = fwd(&fx);
    let u = f.user_semantic(&[]).unwrap().to_vec();
    assert!(u.iter().all(|&v| v == 0.0));
    assert_eq!(u.len(), fx.params.cfg.news_dim());
}

#[test]
fn history_permutation_invariance() {
    let fx = fixture();
    let mut f1 = fwd(&fx);
    let a = f1.user_semantic(&[1, 2, 5]).unwrap().to_vec();
    let mut f2 = fwd(&fx);
    let b = f2.user_semantic(&[5, 1, 2]).unwrap().to_vec();
    assert!(max_abs_diff(&a, &b) < 1e-10);
}

#[test]
fn user_id_lookup_and_cold_row() {
    let fx = fixture();
    let mut f = fwd(&fx);
    let (_, q, m_u) = get_matrix(&fx.params, "user_id_emb");
    let row = f.user_id_repr(2).unwrap().to_vec();
    assert_eq!(&row, &m_u[2 * q..3 * q]);
    let cold = f.user_id_repr(0).unwrap().to_vec();
    assert!(cold.iter().all(|&v| v == 0.0));
}

#[test]
fn gradient_reaches_only_looked_up_id_rows() {
    let fx = fixture();
    let mut f = fwd(&fx);
    let r = f.user_id_repr(2).unwrap();
    let loss = r.dot(&r).unwrap();
    let grads = f.tape.backward(&loss, &fx.params.store).unwrap();
    let id = fx.params.store.by_name("user_id_emb").unwrap();
    let g = grads.get(id);
    let q = fx.params.cfg.id_dim;
    assert!(g[2 * q..3 * q].iter().any(|&v| v != 0.0));
    for row in [0usize, 1, 3, 4] {
        assert!(g[row * q..(row + 1) * q].iter().all(|&v| v == 0.0), "row {row}");
    }
}

// ---------------------------------------------------------------
// Two-hop
// ---------------------------------------------------------------

#[test]
fn single_neighbor_is_its_embedding_row() {
    let fx = fixture();
    let mut f = fwd(&fx);
    let row = NeighborRow::from_ids(&[3], 3);
    let (_, q, m_u) = get_matrix(&fx.params, "user_id_emb");
    let got = f.neighbor_user_repr(&row).unwrap().to_vec();
    assert!(max_abs_diff(&got, &m_u[3 * q..4 * q]) < 1e-12);

    let (_, _, m_n) = get_matrix(&fx.params, "news_id_emb");
    let row = NeighborRow::from_ids(&[4], 3);
    let got = f.neighbor_news_id_repr(&row).unwrap().to_vec();
    assert!(max_abs_diff(&got, &m_n[4 * q..5 * q]) < 1e-12);
}

#[test]
fn zero_query_neighbor_attention_is_mean() {
    let mut fx = fixture();
    zero_param(&mut fx.params, "two_hop.user_attn.q");
    let mut f = fwd(&fx);
    let row = NeighborRow::from_ids(&[1, 2, 4], 3);
    let got = f.neighbor_user_repr(&row).unwrap().to_vec();
    let (_, q, m_u) = get_matrix(&fx.params, "user_id_emb");
    for c in 0..q {
        let mean = (m_u[q + c] + m_u[2 * q + c] + m_u[4 * q + c]) / 3.0;
        assert!((got[c] - mean).abs() < 1e-12);
    }
}

#[test]
fn fully_padded_rows_give_zeros() {
    let fx = fixture();
    let mut f = fwd(&fx);
    let row = NeighborRow::padded(3);
    assert!(f.neighbor_user_repr(&row).unwrap().to_vec().iter().all(|&v| v == 0.0));
    assert!(f.neighbor_news_id_repr(&row).unwrap().to_vec().iter().all(|&v| v == 0.0));
    assert!(f.neighbor_news_sem_repr(&row).unwrap().to_vec().iter().all(|&v| v == 0.0));
}

/// Naive-loop oracle for the neighbor-news ID attention.
#[test]
fn neighbor_news_id_matches_naive_loops() {
    let cfg = ModelConfig { neighbors: 5, ..fixture_cfg() };
    let fx = fixture_with(cfg);
    let mut f = fwd(&fx);
    let row = NeighborRow::from_ids(&[1, 2, 3, 5, 6], 5);
    let got = f.neighbor_news_id_repr(&row).unwrap().to_vec();

    let (_, q, m_n) = get_matrix(&fx.params, "news_id_emb");
    let a_dim = fx.params.cfg.attn_hidden;
    let (_, _, w) = get_matrix(&fx.params, "two_hop.news_id_attn.w");
    let (_, _, b) = get_matrix(&fx.params, "two_hop.news_id_attn.b");
    let (_, _, qv) = get_matrix(&fx.params, "two_hop.news_id_attn.q");
    let emb: Vec<&[f64]> =
        row.ids.iter().map(|&i| &m_n[i as usize * q..(i as usize + 1) * q]).collect();
    let scores: Vec<f64> = emb
        .iter()
        .map(|e| {
            (0..a_dim)
                .map(|x| {
                    let mut t = b[x];
                    for y in 0..q {
                        t += e[y] * w[y * a_dim + x];
                    }
                    t.tanh() * qv[x]
                })
                .sum()
        })
        .collect();
    let beta = naive_softmax(&scores, &row.mask);
    let mut want = vec![0.0; q];
    for (i, e) in emb.iter().enumerate() {
        for c in 0..q {
            want[c] += beta[i] * e[c];
        }
    }
    assert!(max_abs_diff(&got, &want) < 1e-10);
}

#[test]
fn single_semantic_neighbor_is_its_encoding() {
    let fx = fixture();
    let mut f = fwd(&fx);
    let row = NeighborRow::from_ids(&[2], 3);
    let got = f.neighbor_news_sem_repr(&row).unwrap().to_vec();
    let want = f.encode_news(2).unwrap().to_vec();
    assert!(max_abs_diff(&got, &want) < 1e-12);
}

#[test]
fn neighbor_permutation_and_pad_randomization_invariance() {
    let fx = fixture();
    let mut f1 = fwd(&fx);
    let a = f1.neighbor_news_sem_repr(&NeighborRow::from_ids(&[1, 2, 5], 3)).unwrap().to_vec();
    let mut f2 = fwd(&fx);
    let b = f2.neighbor_news_sem_repr(&NeighborRow::from_ids(&[5, 1, 2], 3)).unwrap().to_vec();
    assert!(max_abs_diff(&a, &b) < 1e-10);

    // Padded slot contents are irrelevant.
    let mut padded = NeighborRow::from_ids(&[1, 2], 3);
    padded.ids[2] = 6; // garbage id under a false mask
    let mut f3 = fwd(&fx);
    let c = f3.neighbor_news_sem_repr(&padded).unwrap().to_vec();
    let mut f4 = fwd(&fx);
    let d = f4.neighbor_news_sem_repr(&NeighborRow::from_ids(&[1, 2], 3)).unwrap().to_vec();
    assert!(max_abs_diff(&c, &d) < 1e-12);
}

#[test]
fn masking_out_equals_removing() {
    let fx = fixture();
    let full = NeighborRow::from_ids(&[1, 2, 4], 3);
    let mut masked = full.clone();
    masked.mask[2] = false;
    masked.ids[2] = 0;
    let shorter = NeighborRow::from_ids(&[1, 2], 3);
    let mut f1 = fwd(&fx);
    let a = f1.neighbor_user_repr(&masked).unwrap().to_vec();
    let mut f2 = fwd(&fx);
    let b = f2.neighbor_user_repr(&shorter).unwrap().to_vec();
    assert_eq!(a, b);
}

// ---------------------------------------------------------------
// Scoring and loss
// ---------------------------------------------------------------

#[test]
fn assemble_layouts() {
    let tape = Tape::<f64>::new();
    let ut = tape.constant(1, 3, vec![1.0, 2.0, 3.0]);
    let ue = tape.constant(1, 2, vec![4.0, 5.0]);
    let un = tape.constant(1, 2, vec![6.0, 7.0]);
    let u = assemble_user(&tape, &ut, &ue, Some(&un)).unwrap();
    assert_eq!(u.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    let dropped = assemble_user(&tape, &ut, &ue, None).unwrap();
    assert_eq!(dropped.cols(), 5);

    let n = assemble_news(&tape, Some(&ut), Some(&ue), &un).unwrap();
    assert_eq!(n.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    let zeros = assemble_news(
        &tape,
        Some(&tape.zeros(1, 3)),
        Some(&tape.zeros(1, 2)),
        &tape.zeros(1, 2),
    )
    .unwrap();
    assert!(zeros.to_vec().iter().all(|&v| v == 0.0));
}

#[test]
fn score_is_dot_product_and_checks_dims() {
    let tape = Tape::<f64>::new();
    let u = tape.constant(1, 2, vec![1.0, 2.0]);
    let n = tape.constant(1, 2, vec![3.0, 4.0]);
    assert_eq!(score(&u, &n).unwrap().scalar().unwrap(), 11.0);

    // Bilinear: scaling one side scales the score.
    let scaled = score(&u.scale(3.0), &n).unwrap().scalar().unwrap();
    assert_eq!(scaled, 33.0);

    // Orthogonal projected vectors score zero.
    let a = tape.constant(1, 2, vec![1.0, 0.0]);
    let b = tape.constant(1, 2, vec![0.0, 1.0]);
    assert_eq!(score(&a, &b).unwrap().scalar().unwrap(), 0.0);

    let raw = tape.constant(1, 3, vec![0.0; 3]);
    assert!(matches!(score(&u, &raw), Err(crate::error::Error::Contract(_))));
}

#[test]
fn nce_loss_uniform_scores_is_ln5() {
    let tape = Tape::<f64>::new();
    let pos = tape.constant(1, 1, vec![0.7]);
    let negs: Vec<_> = (0..4).map(|_| tape.constant(1, 1, vec![0.7])).collect();
    let loss = nce_loss(&pos, &negs, 4).unwrap().scalar().unwrap();
    assert!((loss - 5.0f64.ln()).abs() < 1e-12);
}

#[test]
fn nce_loss_direct_formula_case() {
    // pos = 1, negs all 0: loss = -ln(e / (e + 4)) = 0.90483...,
    // evaluated directly from the formula.
    let tape = Tape::<f64>::new();
    let pos = tape.constant(1, 1, vec![1.0]);
    let negs: Vec<_> = (0..4).map(|_| tape.constant(1, 1, vec![0.0])).collect();
    let loss = nce_loss(&pos, &negs, 4).unwrap().scalar().unwrap();
    let e = 1.0f64.exp();
    let want = -(e / (e + 4.0)).ln();
    assert!((loss - want).abs() < 1e-12);
    assert!((want - 0.904832441554448).abs() < 1e-12);
}

#[test]
fn nce_loss_vanishes_for_dominant_positive() {
    let tape = Tape::<f64>::new();
    let pos = tape.constant(1, 1, vec![60.0]);
    let negs: Vec<_> = (0..4).map(|_| tape.constant(1, 1, vec![0.0])).collect();
    let loss = nce_loss(&pos, &negs, 4).unwrap().scalar().unwrap();
    assert!((0.0..1e-12).contains(&loss));
}

#[test]
fn nce_loss_wrong_arity_is_contract_error() {
    let tape = Tape::<f64>::new();
    let pos = tape.constant(1, 1, vec![0.0]);
    let negs: Vec<_> = (0..3).map(|_| tape.constant(1, 1, vec![0.0])).collect();
    assert!(matches!(nce_loss(&pos, &negs, 4), Err(crate::error::Error::Contract(_))));
}

#[test]
fn nce_loss_shift_invariant_and_decreasing() {
    let tape = Tape::<f64>::new();
    let base: Vec<f64> = vec![0.3, -0.2, 0.8, 0.1];
    let mk = |p: f64, shift: f64| {
        let pos = tape.constant(1, 1, vec![p + shift]);
        let negs: Vec<_> = base.iter().map(|&v| tape.constant(1, 1, vec![v + shift])).collect();
        nce_loss(&pos, &negs, 4).unwrap().scalar().unwrap()
    };
    assert!((mk(0.5, 0.0) - mk(0.5, 7.3)).abs() < 1e-6);
    // Strictly decreasing in the positive score.
    let mut prev = f64::INFINITY;
    for p in [-1.0, -0.5, 0.0, 0.5, 1.0, 2.0] {
        let l = mk(p, 0.0);
        assert!(l < prev);
        assert!(l >= 0.0);
        prev = l;
    }
}

#[test]
fn nce_gradient_is_softmax_minus_onehot() {
    let mut store = crate::tensor::ParamStore::<f64>::new();
    let ids: Vec<_> = (0..5).map(|i| store.add(&format!("s{i}"), 1, 1, vec![0.3 * i as f64 - 0.4])).collect();
    let tape = Tape::new();
    let scores: Vec<_> = ids.iter().map(|&id| tape.param(&store, id)).collect();
    let loss = nce_loss(&scores[0], &scores[1..], 4).unwrap();
    let grads = tape.backward(&loss, &store).unwrap();

    let vals: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.4).collect();
    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    for (i, &id) in ids.iter().enumerate() {
        let softmax = exps[i] / z;
        let want = if i == 0 { softmax - 1.0 } else { softmax };
        assert!((grads.get(id)[0] - want).abs() < 1e-12, "score {i}");
    }

    // Against central differences as well.
    let report = finite_difference_check(
        &mut store,
        |tape, s| {
            let scores: Vec<_> = (0..5).map(|i| tape.param(s, i)).collect();
            nce_loss(&scores[0], &scores[1..], 4)
        },
        &FdOptions { step: 1e-6, ..Default::default() },
    )
    .unwrap();
    assert!(report.worst < 1e-6);
}

// ---------------------------------------------------------------
// Assembled model
// ---------------------------------------------------------------

fn toy_sample() -> TrainingSample {
    TrainingSample { user: 2, history: vec![1, 3], pos: 5, negs: vec![2, 4] }
}

#[test]
fn full_loss_passes_gradcheck_at_1e5() {
    let fx = fixture();
    let news = fx.news;
    let tables = fx.tables;
    let samples =
        [toy_sample(), TrainingSample { user: 4, history: vec![], pos: 2, negs: vec![6, 1] }];
    let cfg = fx.params.cfg.clone();
    let sizes = fx.params.sizes;
    let mut store = fx.params.store;

    let report = finite_difference_check(
        &mut store,
        |tape, s| {
            let params = ModelParams {
                cfg: cfg.clone(),
                sizes,
                store: s.clone(),
                ids: rebuild_param_ids(&cfg, s),
            };
            let mut fwd = Forward::on_tape(tape.clone(), &params, &news, &tables, false, 0);
            let mut total: Option<crate::tensor::Tensor<f64>> = None;
            for sample in &samples {
                let l = fwd.sample_loss(sample)?;
                total = Some(match total {
                    Some(t) => t.add(&l)?,
                    None => l,
                });
            }
            Ok(total.unwrap().scale(0.5))
        },
        // Floor the relative-error denominator at 1e-5: central
        // differences carry ~1e-11 absolute roundoff here, which would
        // dominate the ratio on near-zero gradient coordinates.
        &FdOptions { step: 1e-5, denom_floor: 1e-5, ..Default::default() },
    );
    let report = report.unwrap();
    assert!(report.worst < 1e-5, "worst rel err {}", report.worst);
}


#[test]
fn avgpool_flags_ignore_attention_parameters() {
    let mut cfg = fixture_cfg();
    cfg.ablation.avgpool_self = true;
    cfg.ablation.avgpool_word = true;
    cfg.ablation.avgpool_onehop = true;
    cfg.ablation.avgpool_twohop = true;
    let mut fx = fixture_with(cfg);
    let sample = toy_sample();
    let mut f1 = Forward::new(&fx.params, &fx.news, &fx.tables, false, 0);
    let a = f1.sample_loss(&sample).unwrap().scalar().unwrap();
    drop(f1);

    // Scramble every attention parameter; outputs must be identical.
    for name in [
        "news.self_attn.w_s.0",
        "news.self_attn.w_s.1",
        "news.word_attn.w",
        "news.word_attn.b",
        "news.word_attn.q",
        "user.clicked_attn.w",
        "user.clicked_attn.b",
        "user.clicked_attn.q",
        "two_hop.user_attn.q",
        "two_hop.news_id_attn.q",
        "two_hop.news_sem_attn.q",
    ] {
        let id = fx.params.store.by_name(name).unwrap();
        let n = fx.params.store.get(id).len();
        fx.params.store.set_data(id, vec![3.21; n]);
    }
    let mut f2 = Forward::new(&fx.params, &fx.news, &fx.tables, false, 0);
    let b = f2.sample_loss(&sample).unwrap().scalar().unwrap();
    assert_eq!(a, b);
}

#[test]
fn drop_ablations_shrink_the_model() {
    let mut cfg = fixture_cfg();
    cfg.ablation.apply("no-two-hop").unwrap();
    let fx = fixture_with(cfg);
    assert!(fx.params.store.by_name("news_id_emb").is_none());
    assert!(fx.params.store.by_name("two_hop.user_attn.w").is_none());
    let mut f = Forward::new(&fx.params, &fx.news, &fx.tables, false, 0);
    let loss = f.sample_loss(&toy_sample()).unwrap().scalar().unwrap();
    assert!(loss.is_finite());
    // User vector is [semantic; id] only.
    let u = f.user_vector(2, &[1, 3]).unwrap();
    assert_eq!(u.cols(), fx.params.cfg.common_dim);
}

#[test]
fn batch_gradient_equals_sum_of_per_sample_gradients() {
    let fx = fixture();
    let samples = [toy_sample(), TrainingSample { user: 1, history: vec![2], pos: 3, negs: vec![4, 6] }];

    // Route 1: one tape for the summed loss.
    let mut joint = Forward::new(&fx.params, &fx.news, &fx.tables, false, 0);
    let mut total = joint.tape.zeros(1, 1);
    for s in &samples {
        let l = joint.sample_loss(s).unwrap();
        total = total.add(&l).unwrap();
    }
    let joint_grads = joint.tape.backward(&total, &fx.params.store).unwrap();

    // Route 2: independent tapes, gradients summed.
    let mut acc: Option<crate::tensor::Gradients<f64>> = None;
    for s in &samples {
        let mut f = Forward::new(&fx.params, &fx.news, &fx.tables, false, 0);
        let l = f.sample_loss(s).unwrap();
        let g = f.tape.backward(&l, &fx.params.store).unwrap();
        match &mut acc {
            Some(t) => t.merge(&g),
            None => acc = Some(g),
        }
    }
    let acc = acc.unwrap();

    for (id, p) in fx.params.store.iter() {
        let a = joint_grads.get(id);
        let b = acc.get(id);
        for (x, y) in a.iter().zip(b) {
            let scale = x.abs().max(y.abs()).max(1e-3);
            assert!((x - y).abs() / scale < 1e-10, "param {}", p.name);
        }
    }
}

#[test]
fn attention_weights_normalize_across_all_sites() {
    let fx = fixture();
    let mut f = Forward::new(&fx.params, &fx.news, &fx.tables, false, 0);
    f.enable_trace();
    let _ = f.sample_loss(&toy_sample()).unwrap();
    let trace = f.trace.take().unwrap();
    let mut seen = std::collections::HashSet::new();
    for (site, weights, mask) in &trace.entries {
        seen.insert(*site);
        let sum: f64 = weights.iter().zip(mask).filter(|(_, &m)| m).map(|(&w, _)| w).sum();
        assert!((sum - 1.0).abs() < 1e-9, "{site:?} weights sum to {sum}");
        for (w, m) in weights.iter().zip(mask) {
            if !m {
                assert_eq!(*w, 0.0, "{site:?} leaked mass onto a masked slot");
            }
        }
    }
    for site in [
        AttnSite::SelfAttn,
        AttnSite::WordAttn,
        AttnSite::ClickedNews,
        AttnSite::NeighborUser,
        AttnSite::NeighborNewsId,
        AttnSite::NeighborNewsSem,
    ] {
        assert!(seen.contains(&site), "{site:?} never traced");
    }
}
