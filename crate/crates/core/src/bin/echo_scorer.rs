//! Protocol reference server: logit `k` is the mean of channel `k mod M`.
//!
//! Usage: itb-echo-scorer <classes> <m> <t> [max-requests]

use std::io::{stdin, stdout};

use itb_core::models::external::{serve_limited, ChannelMeanScorer};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("arguments are non-negative integers"))
        .collect();
    if args.len() < 3 {
        eprintln!("usage: itb-echo-scorer <classes> <m> <t> [max-requests]");
        std::process::exit(2);
    }
    let scorer = ChannelMeanScorer {
        n_classes: args[0],
        shape: (args[1], args[2]),
    };
    if let Err(e) = serve_limited(&scorer, stdin().lock(), stdout().lock(), args.get(3).copied()) {
        eprintln!("itb-echo-scorer: {e}");
        std::process::exit(1);
    }
}
