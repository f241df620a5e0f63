//! Key-derived structure shared by embedder and authenticator: the area
//! layout, two-sided circular dependency chains, far pairs between blocks of
//! the same texture class, and per-block coefficient positions.
//!
//! The block grid is cut into a 4x4 arrangement of tiles. Tile `(tr, tc)`
//! belongs to area `A..D` by the parity of its coordinates and is sub-area
//! `1..4` of that area by its quadrant:
//!
//! ```text
//! A1 B1 A2 B2
//! C1 D1 C2 D2
//! A3 B3 A4 B4
//! C3 D3 C4 D4
//! ```
//!
//! so the four sub-areas of one area sit in four different image quadrants.
//! Every chain is a 4-cycle visiting sub-areas 1 -> 2 -> 3 -> 4 -> 1 of one
//! area.

use serde::Serialize;

use crate::texture::{BlockGrid, BlockType};

/// Number of LL1 positions keyed per block.
pub const POSITIONS_PER_BLOCK: usize = 63;
const LL_CELLS: u64 = 64;

const PURPOSE_CHAINS: u64 = 0x6368_6169_6e73_0001;
const PURPOSE_PAIRS_NORMAL: u64 = 0x7061_6972_734e_0002;
const PURPOSE_PAIRS_ROUGH: u64 = 0x7061_6972_7352_0003;
const PURPOSE_POSITIONS: u64 = 0x706f_7369_7469_0004;
const PURPOSE_WHITENING: u64 = 0x7768_6974_656e_0005;
const BLOCK_MIX: u64 = 0xD1B5_4A32_D192_ED03;

/// Shared secret from which every keyed structure is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct SecretKey(pub u64);

impl SecretKey {
    /// Parses a decimal or `0x`-prefixed hexadecimal key.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let v = if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
            u64::from_str_radix(hex, 16).ok()?
        } else {
            s.parse().ok()?
        };
        Some(SecretKey(v))
    }

    fn stream(self, purpose: u64) -> Keystream {
        Keystream::new(self.0 ^ purpose)
    }
}

/// SplitMix64 generator.
#[derive(Clone, Debug)]
pub struct Keystream {
    state: u64,
}

impl Keystream {
    pub fn new(seed: u64) -> Self {
        Keystream { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform-ish index in `0..bound` by reduction modulo `bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }

    /// In-place Fisher-Yates shuffle, drawing `j = next % (i + 1)` for `i`
    /// from the last index down to 1.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Area {
    A,
    B,
    C,
    D,
}

impl Area {
    pub const ALL: [Area; 4] = [Area::A, Area::B, Area::C, Area::D];

    fn index(self) -> usize {
        self as usize
    }
}

/// Area and sub-area (1..=4) of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Placement {
    pub area: Area,
    pub sub_area: u8,
}

/// Area assignment of every block, row-major. Requires a grid whose sides
/// are multiples of 4 blocks, which [`BlockGrid`] guarantees.
pub fn build_areas(grid: &BlockGrid) -> Vec<Placement> {
    let tw = grid.blocks_w / 4;
    let th = grid.blocks_h / 4;
    (0..grid.len())
        .map(|i| {
            let (bx, by) = grid.coords(i);
            let (tc, tr) = (bx / tw, by / th);
            Placement {
                area: Area::ALL[(tr % 2) * 2 + tc % 2],
                sub_area: ((tr / 2) * 2 + tc / 2 + 1) as u8,
            }
        })
        .collect()
}

/// Row-major block indices of the tile holding `(area, sub_area)`.
fn tile_blocks(grid: &BlockGrid, area: Area, sub_area: u8) -> Vec<usize> {
    let tw = grid.blocks_w / 4;
    let th = grid.blocks_h / 4;
    let a = area.index();
    let s = (sub_area - 1) as usize;
    let tr = (s / 2) * 2 + a / 2;
    let tc = (s % 2) * 2 + a % 2;
    let mut out = Vec::with_capacity(tw * th);
    for by in tr * th..(tr + 1) * th {
        for bx in tc * tw..(tc + 1) * tw {
            out.push(grid.index(bx, by));
        }
    }
    out
}

/// Dependency chains: `members[s]` is the chain's block in sub-area `s + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Chains {
    pub members: Vec<[usize; 4]>,
    /// Chain index of every block.
    pub chain_of: Vec<usize>,
    pub next: Vec<usize>,
    pub prev: Vec<usize>,
}

pub fn build_chains(key: SecretKey, grid: &BlockGrid) -> Chains {
    let mut rng = key.stream(PURPOSE_CHAINS);
    let n = grid.len();
    let mut members = Vec::with_capacity(n / 4);
    for area in Area::ALL {
        let perms: Vec<Vec<usize>> = (1..=4u8)
            .map(|s| {
                let mut slots = tile_blocks(grid, area, s);
                rng.shuffle(&mut slots);
                slots
            })
            .collect();
        for k in 0..perms[0].len() {
            members.push([perms[0][k], perms[1][k], perms[2][k], perms[3][k]]);
        }
    }
    let mut chain_of = vec![0; n];
    let mut next = vec![0; n];
    let mut prev = vec![0; n];
    for (c, m) in members.iter().enumerate() {
        for s in 0..4 {
            chain_of[m[s]] = c;
            next[m[s]] = m[(s + 1) % 4];
            prev[m[s]] = m[(s + 3) % 4];
        }
    }
    Chains {
        members,
        chain_of,
        next,
        prev,
    }
}

fn centre_distance_sq(grid: &BlockGrid, a: usize, b: usize) -> usize {
    let (ax, ay) = grid.coords(a);
    let (bx, by) = grid.coords(b);
    ax.abs_diff(bx).pow(2) + ay.abs_diff(by).pow(2)
}

/// Greedy far pairing, run separately for Normal and Rough blocks. Blocks
/// are visited in keyed order; each unpaired visitor takes the farthest
/// unpaired block of its class (ties: lowest index). A leftover block pairs
/// with itself. Smooth blocks get `None`.
pub fn build_pairs(key: SecretKey, grid: &BlockGrid, types: &[BlockType]) -> Vec<Option<usize>> {
    let mut pair = vec![None; types.len()];
    for (kind, purpose) in [
        (BlockType::Normal, PURPOSE_PAIRS_NORMAL),
        (BlockType::Rough, PURPOSE_PAIRS_ROUGH),
    ] {
        let members: Vec<usize> = (0..types.len()).filter(|&i| types[i] == kind).collect();
        let mut order = members.clone();
        key.stream(purpose).shuffle(&mut order);
        for &b in &order {
            if pair[b].is_some() {
                continue;
            }
            let mut best: Option<(usize, usize)> = None;
            for &c in &members {
                if c == b || pair[c].is_some() {
                    continue;
                }
                let d = centre_distance_sq(grid, b, c);
                // members are ascending, so strict > keeps the lowest index on ties
                if best.is_none_or(|(bd, _)| d > bd) {
                    best = Some((d, c));
                }
            }
            match best {
                Some((_, c)) => {
                    pair[b] = Some(c);
                    pair[c] = Some(b);
                }
                None => pair[b] = Some(b),
            }
        }
    }
    pair
}

/// 63 distinct LL1 cell indices (row-major in the 8x8 band) for a block.
pub fn coeff_positions(key: SecretKey, block_index: usize) -> [u8; POSITIONS_PER_BLOCK] {
    let seed = key.0 ^ PURPOSE_POSITIONS ^ (block_index as u64).wrapping_mul(BLOCK_MIX);
    let mut cells: Vec<u8> = (0..LL_CELLS as u8).collect();
    Keystream::new(seed).shuffle(&mut cells);
    let mut out = [0u8; POSITIONS_PER_BLOCK];
    out.copy_from_slice(&cells[..POSITIONS_PER_BLOCK]);
    out
}

/// Keyed mask XORed onto a block's 63 payload slots before embedding, so a
/// constant or blank block never reads back as a key-independent payload.
pub fn whitening_mask(key: SecretKey, block_index: usize) -> u64 {
    let seed = key.0 ^ PURPOSE_WHITENING ^ (block_index as u64).wrapping_mul(BLOCK_MIX);
    Keystream::new(seed).next_u64() & ((1 << POSITIONS_PER_BLOCK) - 1)
}

/// Everything the key and grid determine, plus the type-dependent pair map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    pub key: SecretKey,
    pub grid: BlockGrid,
    pub placement: Vec<Placement>,
    pub chains: Chains,
    pub positions: Vec<[u8; POSITIONS_PER_BLOCK]>,
    pub whitening: Vec<u64>,
    pub pairs: Vec<Option<usize>>,
}

impl Topology {
    /// Chains, areas and positions; pairs stay empty until
    /// [`Topology::assign_pairs`].
    pub fn new(key: SecretKey, grid: BlockGrid) -> Self {
        Topology {
            key,
            grid,
            placement: build_areas(&grid),
            chains: build_chains(key, &grid),
            positions: (0..grid.len()).map(|i| coeff_positions(key, i)).collect(),
            whitening: (0..grid.len()).map(|i| whitening_mask(key, i)).collect(),
            pairs: vec![None; grid.len()],
        }
    }

    pub fn with_types(key: SecretKey, grid: BlockGrid, types: &[BlockType]) -> Self {
        let mut t = Self::new(key, grid);
        t.assign_pairs(types);
        t
    }

    pub fn assign_pairs(&mut self, types: &[BlockType]) {
        self.pairs = build_pairs(self.key, &self.grid, types);
    }

    #[inline]
    pub fn next(&self, block: usize) -> usize {
        self.chains.next[block]
    }

    #[inline]
    pub fn prev(&self, block: usize) -> usize {
        self.chains.prev[block]
    }

    #[inline]
    pub fn pair(&self, block: usize) -> Option<usize> {
        self.pairs[block]
    }

    /// The four members of `block`'s chain, sub-area 1 first.
    #[inline]
    pub fn cycle(&self, block: usize) -> [usize; 4] {
        self.chains.members[self.chains.chain_of[block]]
    }

    pub fn report(&self) -> Vec<TopologyEntry> {
        (0..self.grid.len())
            .map(|i| {
                let (x, y) = self.grid.coords(i);
                TopologyEntry {
                    block: i,
                    x,
                    y,
                    area: self.placement[i].area,
                    sub_area: self.placement[i].sub_area,
                    prev: self.prev(i),
                    next: self.next(i),
                    pair: self.pair(i),
                    positions: self.positions[i].to_vec(),
                }
            })
            .collect()
    }
}

/// Per-block topology record used by the `inspect` report.
#[derive(Clone, Debug, Serialize)]
pub struct TopologyEntry {
    pub block: usize,
    pub x: usize,
    pub y: usize,
    pub area: Area,
    pub sub_area: u8,
    pub prev: usize,
    pub next: usize,
    pub pair: Option<usize>,
    pub positions: Vec<u8>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize) -> BlockGrid {
        BlockGrid::new(w, h).unwrap()
    }

    #[test]
    fn splitmix_reference_sequence() {
        // first outputs of SplitMix64 seeded with 0
        let mut ks = Keystream::new(0);
        assert_eq!(ks.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(ks.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(ks.next_u64(), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn key_parsing() {
        assert_eq!(SecretKey::parse("42"), Some(SecretKey(42)));
        assert_eq!(SecretKey::parse("0xff"), Some(SecretKey(255)));
        assert_eq!(SecretKey::parse("nope"), None);
    }

    #[test]
    fn areas_on_512() {
        let g = grid(32, 32);
        let p = build_areas(&g);
        assert_eq!(p[g.index(0, 0)], Placement { area: Area::A, sub_area: 1 });
        assert_eq!(p[g.index(31, 31)], Placement { area: Area::D, sub_area: 4 });
        for area in Area::ALL {
            for s in 1..=4 {
                let n = p.iter().filter(|q| q.area == area && q.sub_area == s).count();
                assert_eq!(n, 64);
                assert_eq!(tile_blocks(&g, area, s).len(), 64);
                for b in tile_blocks(&g, area, s) {
                    assert_eq!(p[b], Placement { area, sub_area: s });
                }
            }
        }
    }

    #[test]
    fn areas_on_128() {
        let g = grid(8, 8);
        let p = build_areas(&g);
        assert_eq!(tile_blocks(&g, Area::C, 2).len(), 4);
        assert_eq!(p[g.index(7, 7)], Placement { area: Area::D, sub_area: 4 });
    }

    #[test]
    fn chains_are_four_cycles_across_sub_areas() {
        let g = grid(32, 32);
        let p = build_areas(&g);
        let c = build_chains(SecretKey(7), &g);
        for b in 0..g.len() {
            assert_eq!(c.prev[c.next[b]], b);
            assert_eq!(c.next[c.prev[b]], b);
            let mut x = b;
            for _ in 0..4 {
                x = c.next[x];
            }
            assert_eq!(x, b);
            assert_ne!(c.next[b], b);
            assert_eq!(p[c.next[b]].area, p[b].area);
            assert_eq!(p[c.next[b]].sub_area, p[b].sub_area % 4 + 1);
        }
        for m in &c.members {
            for (s, &b) in m.iter().enumerate() {
                assert_eq!(p[b].sub_area as usize, s + 1);
            }
        }
    }

    #[test]
    fn different_keys_give_different_chains() {
        let g = grid(32, 32);
        assert_ne!(build_chains(SecretKey(1), &g).next, build_chains(SecretKey(2), &g).next);
        assert_eq!(build_chains(SecretKey(1), &g), build_chains(SecretKey(1), &g));
    }

    #[test]
    fn two_normal_blocks_pair_together() {
        let g = grid(32, 32);
        let mut types = vec![BlockType::Smooth; g.len()];
        types[g.index(0, 0)] = BlockType::Normal;
        types[g.index(31, 31)] = BlockType::Normal;
        types[g.index(5, 9)] = BlockType::Rough;
        let pairs = build_pairs(SecretKey(3), &g, &types);
        assert_eq!(pairs[g.index(0, 0)], Some(g.index(31, 31)));
        assert_eq!(pairs[g.index(31, 31)], Some(g.index(0, 0)));
        assert_eq!(pairs[g.index(5, 9)], Some(g.index(5, 9)));
        assert_eq!(pairs[1], None);
    }

    #[test]
    fn pairs_replay_greedy_order() {
        let g = grid(16, 16);
        let mut ks = Keystream::new(99);
        let types: Vec<BlockType> = (0..g.len()).map(|_| BlockType::ALL[ks.below(3)]).collect();
        let key = SecretKey(11);
        let pairs = build_pairs(key, &g, &types);
        for (kind, purpose) in [(BlockType::Normal, PURPOSE_PAIRS_NORMAL), (BlockType::Rough, PURPOSE_PAIRS_ROUGH)] {
            let mut order: Vec<usize> = (0..g.len()).filter(|&i| types[i] == kind).collect();
            key.stream(purpose).shuffle(&mut order);
            let mut taken = vec![false; g.len()];
            for &b in &order {
                if taken[b] {
                    continue;
                }
                let p = pairs[b].unwrap();
                assert_eq!(pairs[p], Some(b));
                assert_eq!(types[p], kind);
                let best = (0..g.len())
                    .filter(|&c| c != b && types[c] == kind && !taken[c])
                    .map(|c| centre_distance_sq(&g, b, c))
                    .max();
                match best {
                    Some(d) => assert_eq!(centre_distance_sq(&g, b, p), d),
                    None => assert_eq!(p, b),
                }
                taken[b] = true;
                taken[p] = true;
            }
        }
    }

    #[test]
    fn positions_are_distinct_and_keyed() {
        let a = coeff_positions(SecretKey(5), 0);
        let mut seen = [false; 64];
        for &p in &a {
            assert!(p < 64);
            assert!(!seen[p as usize]);
            seen[p as usize] = true;
        }
        assert_eq!(a, coeff_positions(SecretKey(5), 0));
        assert_ne!(a, coeff_positions(SecretKey(5), 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn keyed_structure_invariants(key in any::<u64>(), codes in proptest::collection::vec(1u8..=3, 256)) {
            let g = grid(16, 16);
            let types: Vec<BlockType> = codes.iter().map(|&c| BlockType::from_code(c).unwrap()).collect();
            let t = Topology::with_types(SecretKey(key), g, &types);
            for b in 0..g.len() {
                // chains: 4-cycles through sub-areas 1..4 of one area
                prop_assert_eq!(t.prev(t.next(b)), b);
                prop_assert_eq!(t.next(t.next(t.next(t.next(b)))), b);
                prop_assert_eq!(t.placement[t.next(b)].area, t.placement[b].area);
                prop_assert_eq!(t.placement[t.next(b)].sub_area, t.placement[b].sub_area % 4 + 1);
                // pairs: same class, mutual, none for smooth blocks
                match t.pair(b) {
                    None => prop_assert_eq!(types[b], BlockType::Smooth),
                    Some(p) => {
                        prop_assert_eq!(types[p], types[b]);
                        prop_assert_eq!(t.pair(p), Some(b));
                    }
                }
                let mut pos = t.positions[b].to_vec();
                pos.sort_unstable();
                pos.dedup();
                prop_assert_eq!(pos.len(), POSITIONS_PER_BLOCK);
                prop_assert!(t.whitening[b] >> POSITIONS_PER_BLOCK == 0);
            }
            let self_pairs = (0..g.len()).filter(|&b| t.pair(b) == Some(b)).count();
            prop_assert!(self_pairs <= 2);
        }
    }
}
