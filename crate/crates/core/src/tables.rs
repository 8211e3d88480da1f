//! CSV export of oracle and learned value tables.

use std::io::{self, Write};

use crate::gmdp::StateId;
use crate::oracle::DistTable;
use crate::scalar::Scalar;
use crate::value::ValueView;

/// `from,to,value` rows for every ordered pair; unreachable pairs read `inf`.
pub fn write_dist_csv<W: Write>(dist: &DistTable, mut out: W) -> io::Result<()> {
    writeln!(out, "from,to,value")?;
    let n = dist.num_states();
    for s in 0..n {
        for g in 0..n {
            writeln!(out, "{s},{g},{}", dist.get(StateId(s), StateId(g)))?;
        }
    }
    Ok(())
}

/// `from,to,value` rows of `values`, or of `-values` when `negate` is set
/// (cost tables such as hitting times).
pub fn write_value_csv<F: Scalar, W: Write>(values: &impl ValueView<F>, negate: bool, mut out: W) -> io::Result<()> {
    writeln!(out, "from,to,value")?;
    let n = values.num_states();
    for s in 0..n {
        for g in 0..n {
            let v = values.value(StateId(s), StateId(g));
            let v = if negate && s != g { -v } else { v };
            writeln!(out, "{s},{g},{v}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmdp::{parse_grid, GridSpec};
    use crate::oracle::shortest_distances;

    #[test]
    fn corridor_rows() {
        let dist = shortest_distances(&GridSpec::corridor(4).unwrap());
        let mut out = Vec::new();
        write_dist_csv(&dist, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.contains("\n0,3,3\n"));
        assert!(text.contains("\n3,0,3\n"));
    }

    #[test]
    fn unreachable_is_inf() {
        let dist = shortest_distances(&parse_grid(".#.").unwrap());
        let mut out = Vec::new();
        write_dist_csv(&dist, &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("0,1,inf"));
    }

    #[test]
    fn negated_values_are_costs() {
        let dist = shortest_distances(&GridSpec::corridor(3).unwrap());
        let mut out = Vec::new();
        write_value_csv(&dist.value_table::<f64>(), true, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("\n0,2,2\n"));
        assert!(text.contains("\n1,1,0\n"));
    }
}
