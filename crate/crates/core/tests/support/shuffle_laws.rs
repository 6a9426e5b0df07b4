//! Channel-shuffle laws checked against an explicit reshape-transpose
//! oracle. Each channel is filled with its own index so permutations are
//! visible directly in the output.

#![allow(dead_code)]

use cass_core::tensor::{channel_shuffle, Shape, Tensor};

fn labelled(c: usize, plane: usize) -> Tensor<f64> {
    let data = (0..c)
        .flat_map(|ch| (0..plane).map(move |p| (ch * 1000 + p) as f64))
        .collect();
    Tensor::from_vec(Shape::new(1, c, 1, plane), data).unwrap()
}

/// The order of input channels after viewing C as a (g, C/g) matrix,
/// transposing it and flattening.
pub fn reshape_transpose_oracle(c: usize, g: usize) -> Vec<usize> {
    let rows: Vec<Vec<usize>> = (0..g).map(|k| (0..c / g).map(|j| k * (c / g) + j).collect()).collect();
    let mut out = Vec::with_capacity(c);
    for j in 0..c / g {
        for row in &rows {
            out.push(row[j]);
        }
    }
    out
}

fn channel_order(t: &Tensor<f64>, plane: usize) -> Vec<usize> {
    (0..t.shape().c())
        .map(|ch| (t.data()[ch * plane] / 1000.0) as usize)
        .collect()
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s
}

/// Checks every law for one (C, g) pair.
pub fn check(c: usize, g: usize) -> Result<(), String> {
    let plane = 3;
    let x = labelled(c, plane);
    let y = channel_shuffle(&x, g).map_err(|e| format!("C={c} g={g}: {e}"))?;
    if channel_order(&y, plane) != reshape_transpose_oracle(c, g) {
        return Err(format!(
            "C={c} g={g}: order {:?} disagrees with oracle",
            channel_order(&y, plane)
        ));
    }
    if g == 1 && y.data() != x.data() {
        return Err(format!("C={c}: groups=1 is not the identity"));
    }
    let back = channel_shuffle(&y, c / g).map_err(|e| format!("C={c} g={}: {e}", c / g))?;
    if back.data() != x.data() {
        return Err(format!("C={c} g={g}: shuffle(g) then shuffle(C/g) is not the identity"));
    }
    if sorted(y.data()) != sorted(x.data()) {
        return Err(format!("C={c} g={g}: value multiset changed"));
    }
    Ok(())
}

/// All divisors g of every C in 1..=max_c.
pub fn exhaustive(max_c: usize) -> Result<usize, String> {
    let mut n = 0;
    for c in 1..=max_c {
        for g in (1..=c).filter(|g| c % g == 0) {
            check(c, g)?;
            n += 1;
        }
    }
    Ok(n)
}
