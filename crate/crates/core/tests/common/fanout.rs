//! Exhaustive broker fanout check against a string-prefix oracle.

use crossbeam_channel::Receiver;
use pushsync::broker::{Broker, ChannelSink};
use pushsync::channel::ChannelPath;
use pushsync::digest::Digest;
use pushsync::notification::{ChangeNotification, EventKind};
use pushsync::uri::normalize_uri;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Channel tree as a node list; node 0 is the root.
#[derive(Debug, Clone)]
pub struct Tree {
    pub nodes: Vec<String>,
}

/// Every ordered tree of depth at most 3 with at most `max_children`
/// children per node.
pub fn all_trees(max_children: usize) -> Vec<Tree> {
    let mut trees = Vec::new();
    for children in 0..=max_children {
        let combos = (max_children + 1).pow(children as u32);
        for mut code in 0..combos {
            let mut nodes = vec!["t".to_string()];
            for c in 0..children {
                let grand = code % (max_children + 1);
                code /= max_children + 1;
                let child = format!("t/c{c}");
                nodes.push(child.clone());
                for g in 0..grand {
                    nodes.push(format!("{child}/g{g}"));
                }
            }
            trees.push(Tree { nodes });
        }
    }
    trees
}

/// Independent oracle: `sub` receives traffic published on `publ`.
fn receives(sub: &str, publ: &str) -> bool {
    publ == sub || (publ.len() > sub.len() && publ.starts_with(sub) && publ.as_bytes()[sub.len()] == b'/')
}

fn path(s: &str) -> ChannelPath {
    s.parse().expect("test channel is valid")
}

/// Subscribes one sink per entry of `subs` (node indices), publishes two
/// CNs per node in tree order and then in reverse, and compares every
/// sink's stream with the oracle. Returns the number of deliveries.
pub fn check_placement(tree: &Tree, subs: &[usize]) -> Result<u64, String> {
    let broker = Broker::new();
    let paths: Vec<ChannelPath> = tree.nodes.iter().map(|n| path(n)).collect();
    for p in &paths {
        broker.create_channel(p);
    }
    let mut receivers: Vec<Receiver<ChangeNotification>> = Vec::new();
    for (i, &node) in subs.iter().enumerate() {
        let (sink, rx) = ChannelSink::new(256);
        broker
            .subscribe(&format!("s{i}"), &paths[node], sink)
            .map_err(|e| format!("subscribe failed: {e}"))?;
        receivers.push(rx);
    }
    let uri = normalize_uri("http://ex.org/r").expect("valid");
    let order: Vec<usize> = (0..paths.len()).chain((0..paths.len()).rev()).collect();
    let mut published: Vec<(u64, usize)> = Vec::new();
    let mut seq = 0;
    for &node in &order {
        for _ in 0..2 {
            seq += 1;
            let cn = ChangeNotification::new(
                seq,
                EventKind::Update,
                uri.clone(),
                seq,
                paths[node].clone(),
                Some(Digest::of(b"x")),
            )
            .map_err(|e| e.to_string())?;
            let receipt = broker.publish(&paths[node], &cn).map_err(|e| e.to_string())?;
            let expected = subs
                .iter()
                .filter(|&&s| receives(&tree.nodes[s], &tree.nodes[node]))
                .count();
            if receipt.fanout_count != expected || !receipt.failures.is_empty() {
                return Err(format!(
                    "publish on {} reported fanout {} (expected {expected})",
                    tree.nodes[node], receipt.fanout_count
                ));
            }
            published.push((seq, node));
        }
    }
    let mut delivered = 0;
    for (i, rx) in receivers.iter().enumerate() {
        let got: Vec<u64> = rx.try_iter().map(|cn| cn.seq).collect();
        let want: Vec<u64> = published
            .iter()
            .filter(|(_, node)| receives(&tree.nodes[subs[i]], &tree.nodes[*node]))
            .map(|(s, _)| *s)
            .collect();
        if got != want {
            return Err(format!(
                "tree {:?}, subscription on {}: got {got:?}, expected {want:?}",
                tree.nodes, tree.nodes[subs[i]]
            ));
        }
        delivered += got.len() as u64;
    }
    Ok(delivered)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FanoutStats {
    pub trees: u64,
    pub placements: u64,
    pub deliveries: u64,
}

/// All trees; every multiset of at most two subscriptions; plus
/// `ten_sub_samples` seeded placements of ten subscriptions per tree.
pub fn fanout_exhaustive(max_children: usize, ten_sub_samples: usize) -> Result<FanoutStats, String> {
    let mut stats = FanoutStats::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xFA40);
    for tree in all_trees(max_children) {
        stats.trees += 1;
        let n = tree.nodes.len();
        let mut placements: Vec<Vec<usize>> = vec![Vec::new()];
        for a in 0..n {
            placements.push(vec![a]);
            for b in a..n {
                placements.push(vec![a, b]);
            }
        }
        for _ in 0..ten_sub_samples {
            placements.push((0..10).map(|_| rng.random_range(0..n)).collect());
        }
        for subs in &placements {
            stats.deliveries += check_placement(&tree, subs)?;
            stats.placements += 1;
        }
    }
    Ok(stats)
}
