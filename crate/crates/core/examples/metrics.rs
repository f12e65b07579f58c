//! Scores two ranked candidate groups with MAP, MRR and Recall@k.

use dmn_rank::eval::{average_precision, evaluate_groups, reciprocal_rank, RankedLabels};

fn main() {
    // labels in ranked order, best candidate first
    let groups = vec![
        RankedLabels::new("d1", vec![0, 1, 0, 0, 1]),
        RankedLabels::new("d2", vec![1, 0, 0, 0, 0]),
        RankedLabels::new("d3", vec![0, 0, 0]),
    ];
    for g in &groups {
        println!(
            "{}  AP {:?}  RR {:?}",
            g.group_id,
            average_precision(&g.labels),
            reciprocal_rank(&g.labels)
        );
    }
    let m = evaluate_groups(&groups);
    println!("{m}");
    println!("{}\n{}", dmn_rank::eval::Metrics::TSV_HEADER, m.tsv_row());
}
