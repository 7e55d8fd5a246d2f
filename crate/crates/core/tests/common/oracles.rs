//! Brute-force reference implementations of ego selection and piece extraction.

use std::collections::BTreeMap;

pub type Rows = BTreeMap<u32, BTreeMap<i64, (f64, f64, u8)>>;

pub fn by_vehicle(rows: &[(u32, i64, f64, f64, u8)]) -> Rows {
    let mut out: Rows = BTreeMap::new();
    for &(id, f, x, y, lane) in rows {
        out.entry(id).or_default().insert(f, (x, y, lane));
    }
    out
}

/// The five selection conditions written out longhand over raw rows.
pub fn oracle_is_ego(track: &BTreeMap<i64, (f64, f64, u8)>) -> Option<i64> {
    let frames: Vec<i64> = track.keys().copied().collect();
    for &(_, _, lane) in track.values() {
        if !(1..=4).contains(&lane) {
            return None;
        }
    }
    let mut changes = Vec::new();
    for i in 1..frames.len() {
        if track[&frames[i]].2 != track[&frames[i - 1]].2 {
            changes.push(frames[i]);
        }
    }
    if changes.len() != 1 {
        return None;
    }
    let cf = changes[0];
    let ys: Vec<f64> = track.values().map(|v| v.1).collect();
    let span = ys.iter().cloned().fold(f64::MIN, f64::max) - ys.iter().cloned().fold(f64::MAX, f64::min);
    if span <= 1000.0 {
        return None;
    }
    let yc = track[&cf].1;
    if yc < 300.0 || yc > 1900.0 {
        return None;
    }
    let xs: Vec<f64> = track.range(cf - 60..=cf + 60).map(|(_, v)| v.0).collect();
    let range = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
    (range > 10.0).then_some(cf)
}

/// Slot contents by exhaustive search over every vehicle present.
pub fn oracle_grid(present: &[(u32, f64, u8)], ego: u32) -> Option<[u32; 9]> {
    let &(_, y0, lane0) = present.iter().find(|v| v.0 == ego)?;
    let ahead = |lane: u8, y: f64| {
        let mut c: Vec<&(u32, f64, u8)> = present.iter().filter(|v| v.2 == lane && v.1 > y).collect();
        c.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        c.first().map(|v| (v.0, v.1))
    };
    let behind = |lane: u8, y: f64| {
        let mut c: Vec<&(u32, f64, u8)> = present.iter().filter(|v| v.2 == lane && v.1 < y).collect();
        c.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        c.first().map(|v| (v.0, v.1))
    };
    let nearest = |lane: u8| {
        let mut c: Vec<&(u32, f64, u8)> = present.iter().filter(|v| v.2 == lane && v.0 != ego).collect();
        c.sort_by(|a, b| (a.1 - y0).abs().partial_cmp(&(b.1 - y0).abs()).unwrap().then(a.0.cmp(&b.0)));
        c.first().map(|v| (v.0, v.1))
    };
    let mut slots = [0u32; 9];
    slots[4] = ego;
    slots[3] = behind(lane0, y0)?.0;
    slots[5] = ahead(lane0, y0)?.0;
    for (lane, base) in [(lane0.checked_sub(1)?, 0), (lane0 + 1, 6)] {
        let (id, y) = nearest(lane)?;
        slots[base] = behind(lane, y)?.0;
        slots[base + 1] = id;
        slots[base + 2] = ahead(lane, y)?.0;
    }
    Some(slots)
}

/// Counts candidate frames with a full grid, full histories and a full future.
pub fn oracle_piece_count(rows: &Rows, ego: u32, cf: i64) -> usize {
    let mut count = 0;
    for t in cf - 130..cf + 130 {
        let present: Vec<(u32, f64, u8)> =
            rows.iter().filter_map(|(&id, tr)| tr.get(&t).map(|&(_, y, lane)| (id, y, lane))).collect();
        let Some(slots) = oracle_grid(&present, ego) else { continue };
        let future_ok = (1..=10).all(|k| rows[&ego].contains_key(&(t + 5 * k)));
        let hist_ok = slots.iter().all(|id| (0..16).all(|k| rows[id].contains_key(&(t - 30 + 2 * k))));
        if future_ok && hist_ok {
            count += 1;
        }
    }
    count
}
