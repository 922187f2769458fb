mod common;

use common::{masked, model, pairs, sentence, tiny_config};
use sema::models::{ChannelMask, EncodedPair, Family, Network, Trainer};
use sema::semantics::{AnnotatedSentence, ParaphrasePair, EOS};
use sema::tensor::Tape;
use sema::Error;

fn encoded(m: &sema::models::Seq2Seq) -> Vec<EncodedPair> {
    pairs().iter().map(|p| m.encode_pair(p).unwrap()).collect()
}

#[test]
fn multi_encoder_families_have_more_parameters() {
    for (base, pb) in [
        (Family::Transformer, Family::TransformerPb),
        (Family::SrLstm, Family::SrLstmPb),
    ] {
        let a = model(tiny_config(base)).describe();
        let b = model(tiny_config(pb)).describe();
        assert_eq!(a.num_encoders, 1);
        assert_eq!(b.num_encoders, 3);
        assert!(b.num_params > a.num_params, "{pb} {} vs {base} {}", b.num_params, a.num_params);
    }
}

#[test]
fn transformer_pb_merge_is_linear_over_channel_concat() {
    let m = model(masked(Family::TransformerPb, ChannelMask::Both));
    let Network::Transformer(net) = &m.net else { panic!("transformer") };
    let src = m.encode_sentence(&pairs()[0].src).unwrap();
    assert_eq!(src.len(), 5);
    let mut tape = Tape::new(&m.params, 0);
    let (states, _) = net.encode(&mut tape, &[src]).unwrap();
    let parts = [
        tape.value(states.token).clone(),
        tape.value(states.frame.unwrap()).clone(),
        tape.value(states.role.unwrap()).clone(),
    ];
    let merge = net.merge.as_ref().unwrap();
    let w = m.params.value(merge.weight);
    let b = m.params.value(merge.bias.unwrap());
    let got = tape.value(states.merged);
    let d = net.dim;
    for row in 0..5 {
        let cat: Vec<f64> = parts.iter().flat_map(|p| p.row(row).to_vec()).collect();
        for j in 0..d {
            let mut v = b.data()[j];
            for (i, x) in cat.iter().enumerate() {
                v += x * w.get(&[i, j]);
            }
            assert!((v - got.get(&[row, j])).abs() < 1e-10);
        }
    }
}

#[test]
fn sr_lstm_pb_context_with_zero_channels_is_linear() {
    let m = model(masked(Family::SrLstmPb, ChannelMask::None));
    let Network::SrLstm(net) = &m.net else { panic!("lstm") };
    let src = m.encode_sentence(&pairs()[1].src).unwrap();
    let mut tape = Tape::new(&m.params, 0);
    let enc = net.encode(&mut tape, &[src]).unwrap();
    let cs = tape.value(enc.channel_contexts[0]).clone();
    assert!(tape.value(enc.channel_contexts[1]).data().iter().all(|&x| x == 0.0));
    assert!(tape.value(enc.channel_contexts[2]).data().iter().all(|&x| x == 0.0));
    let w = m.params.value(net.context.weight);
    let b = m.params.value(net.context.bias.unwrap());
    let got = tape.value(enc.context);
    for j in 0..net.hidden {
        let mut v = b.data()[j];
        for (i, x) in cs.data().iter().enumerate() {
            v += x * w.get(&[i, j]);
        }
        assert!((v - got.get(&[0, j])).abs() < 1e-10);
    }
}

fn grad_norm(m: &sema::models::Seq2Seq, batch: &[EncodedPair], prefix: &str) -> Option<f64> {
    let mut tape = Tape::new(&m.params, 0);
    let loss = m.net.loss(&mut tape, batch).unwrap().ce_sum;
    let grads = tape.backward(loss).unwrap();
    let mut any = None;
    for (id, p) in m.params.iter() {
        if p.name.starts_with(prefix) {
            let s: f64 = grads.get(id).map_or(0.0, |g| g.data().iter().map(|x| x.abs()).sum());
            *any.get_or_insert(0.0) += s;
        }
    }
    any
}

#[test]
fn masked_channels_get_exactly_zero_gradient() {
    for family in [Family::TransformerPb, Family::SrLstmPb] {
        let m = model(masked(family, ChannelMask::FrameOnly));
        let batch = encoded(&m);
        assert_eq!(grad_norm(&m, &batch, "emb/role"), Some(0.0), "{family}");
        assert_eq!(grad_norm(&m, &batch, "enc/role"), Some(0.0), "{family}");
        assert!(grad_norm(&m, &batch, "emb/frame").unwrap() > 0.0, "{family}");

        let m = model(masked(family, ChannelMask::RoleOnly));
        assert_eq!(grad_norm(&m, &batch, "emb/frame"), Some(0.0), "{family}");
        assert_eq!(grad_norm(&m, &batch, "enc/frame"), Some(0.0), "{family}");
        assert!(grad_norm(&m, &batch, "emb/role").unwrap() > 0.0, "{family}");
    }
}

#[test]
fn null_labels_keep_shapes() {
    let blank = AnnotatedSentence::from_text("a man rides a horse");
    for mask in [ChannelMask::None, ChannelMask::Both] {
        let m = model(masked(Family::TransformerPb, mask));
        let Network::Transformer(net) = &m.net else { panic!() };
        let src = m.encode_sentence(&blank).unwrap();
        let mut tape = Tape::new(&m.params, 0);
        let (s, _) = net.encode(&mut tape, &[src]).unwrap();
        assert_eq!(tape.shape(s.merged), &[5, 16]);
    }
}

#[test]
fn training_is_deterministic() {
    for family in Family::ALL {
        let run = || {
            let mut t = Trainer::new(model(tiny_config(family)));
            (0..4).map(|_| t.train_step(&pairs()).unwrap().loss).collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b, "{family}");
        assert!(a.iter().all(|l| l.is_finite()));
    }
}

#[test]
fn training_reduces_loss() {
    for family in Family::ALL {
        let mut c = tiny_config(family);
        c.warmup_steps = 1;
        c.learning_rate = 1e-2;
        c.dropout = 0.0;
        let mut t = Trainer::new(model(c));
        let first = t.train_step(&pairs()).unwrap().ce;
        let mut last = first;
        for _ in 0..30 {
            last = t.train_step(&pairs()).unwrap().ce;
        }
        assert!(last < 0.5 * first, "{family}: {first} -> {last}");
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    let m = model(tiny_config(Family::Transformer));
    let mut p = pairs()[0].clone();
    p.tgt = AnnotatedSentence::from_tokens::<&str>(&[]);
    assert!(matches!(m.encode_pair(&p), Err(Error::Contract(_))));
    let mut t = Trainer::new(m);
    assert!(matches!(t.train_step(&[p]), Err(Error::Contract(_))));
    assert!(matches!(t.train_step(&[]), Err(Error::Contract(_))));
    let bad = AnnotatedSentence {
        tokens: vec!["a".into(), "b".into()],
        frames: vec!["O".into()],
        roles: vec!["O".into(), "O".into()],
    };
    assert!(matches!(t.model.encode_sentence(&bad), Err(Error::Alignment { index: 1, .. })));
}

#[test]
fn long_sources_are_truncated_with_their_labels() {
    let mut c = tiny_config(Family::TransformerPb);
    c.max_len = 3;
    let m = model(c);
    let e = m.encode_sentence(&pairs()[0].src).unwrap();
    assert_eq!((e.tokens.len(), e.frames.len(), e.roles.len()), (3, 3, 3));
    let d = m.greedy_decode(&pairs()[0].src, 4).unwrap();
    for (_, labels) in &d.trace.channels {
        assert_eq!(labels.len(), 3);
    }
}

#[test]
fn max_out_bounds_output() {
    for family in Family::ALL {
        let m = model(tiny_config(family));
        let d = m.greedy_decode(&pairs()[0].src, 1).unwrap();
        assert!(d.ids.len() <= 1);
        assert_eq!(d.truncated, d.ids.last() != Some(&EOS));
    }
}

#[test]
fn argmax_ties_pick_lowest_id() {
    for family in Family::ALL {
        let mut m = model(tiny_config(family));
        let out = match &m.net {
            Network::Transformer(n) => n.output.clone(),
            Network::SrLstm(n) => n.output.clone(),
            Network::NvLstm(n) => n.output.clone(),
        };
        m.params.get_mut(out.weight).value.data_mut().fill(0.0);
        m.params.get_mut(out.bias.unwrap()).value.data_mut().fill(0.0);
        let d = m.greedy_decode(&pairs()[0].src, 4).unwrap();
        assert_eq!(d.ids, vec![0; 4], "{family}");
        assert!(d.truncated);
    }
}

#[test]
fn batched_decode_matches_single() {
    for family in Family::ALL {
        let mut c = tiny_config(family);
        c.latent_inference = sema::models::LatentInference::Mean;
        let m = model(c);
        let srcs: Vec<AnnotatedSentence> = pairs().into_iter().map(|p| p.src).collect();
        let batch = m.greedy_decode_batch(&srcs, 8).unwrap();
        for (s, b) in srcs.iter().zip(&batch) {
            let one = m.greedy_decode(s, 8).unwrap();
            assert_eq!(one.ids, b.ids, "{family}");
            for (h1, h2) in one.trace.heads.iter().zip(&b.trace.heads) {
                for (r1, r2) in h1.iter().zip(h2) {
                    for (x, y) in r1.iter().zip(r2) {
                        assert!((x - y).abs() < 1e-9);
                    }
                }
            }
        }
    }
}

#[test]
fn attention_rows_are_distributions() {
    for family in [Family::Transformer, Family::TransformerPb, Family::SrLstm, Family::SrLstmPb] {
        let m = model(tiny_config(family));
        let d = m.greedy_decode(&pairs()[0].src, 6).unwrap();
        let channels: Vec<_> = d.trace.channels.iter().map(|(c, _)| *c).collect();
        assert_eq!(channels.len(), if family.is_multi_encoder() { 3 } else { 1 });
        for rec in d.trace.records(&channels).unwrap() {
            rec.validate().unwrap();
            assert_eq!(rec.weights.len(), d.ids.len());
            for row in &rec.weights {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
    let m = model(tiny_config(Family::NvLstm));
    assert!(m.greedy_decode(&pairs()[0].src, 3).unwrap().trace.is_empty());
}

#[test]
fn checkpoint_round_trip_decodes_identically() {
    let dir = tempfile::tempdir().unwrap();
    for family in Family::ALL {
        let mut t = Trainer::new(model(tiny_config(family)));
        for _ in 0..3 {
            t.train_step(&pairs()).unwrap();
        }
        let path = dir.path().join(family.as_str());
        t.model.save(&path).unwrap();
        let back = sema::models::Seq2Seq::load(&path).unwrap();
        assert_eq!(back.config, t.model.config);
        for p in pairs() {
            let a = t.model.greedy_decode(&p.src, 10).unwrap();
            let b = back.greedy_decode(&p.src, 10).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn checkpoint_with_foreign_vocab_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(tiny_config(Family::SrLstm));
    m.save(dir.path()).unwrap();
    std::fs::write(dir.path().join("vocab.tokens"), "<pad>\n<unk>\n<bos>\n<eos>\nzebra\n").unwrap();
    assert!(matches!(sema::models::Seq2Seq::load(dir.path()), Err(Error::Checkpoint(_))));
}

#[test]
fn nv_lstm_prior_sample_is_seeded() {
    let m = model(tiny_config(Family::NvLstm));
    let Network::NvLstm(net) = &m.net else { panic!() };
    let draw = |seed| {
        let mut tape = Tape::inference(&m.params, seed);
        let s = net.latent(&mut tape, &[&[4, 5]], None).unwrap();
        tape.value(s.z).clone()
    };
    assert_eq!(draw(9), draw(9));
    assert_ne!(draw(9), draw(10));
}

#[test]
fn unknown_words_map_to_unk() {
    let m = model(tiny_config(Family::Transformer));
    let p = ParaphrasePair {
        src: sentence("a zebra", "O O", "O O"),
        tgt: AnnotatedSentence::from_text("zebra"),
    };
    let e = m.encode_pair(&p).unwrap();
    assert_eq!(e.src.tokens[1], sema::semantics::UNK);
    assert_eq!(e.tgt, vec![sema::semantics::UNK]);
}
