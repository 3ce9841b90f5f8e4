use rds_core::error::Result;
use rds_core::graph::{
    dss_connection_param_count, paper_scale_ratio, rds_upsample_param_count, BackboneSpec,
    GraphBuilder, GraphKind,
};

pub fn run(levels: usize, k: usize, json: bool) -> Result<()> {
    let backbone = BackboneSpec::synthetic(levels)?;
    let rds = GraphBuilder::new(GraphKind::Rds, backbone.clone(), k)
        .describe_only()
        .build()?;
    let dss = GraphBuilder::new(GraphKind::Dss, backbone, k)
        .describe_only()
        .build()?;
    let (rds_summary, dss_summary) = (rds.summary(), dss.summary());

    if json {
        let doc = serde_json::json!({
            "levels": levels,
            "k": k,
            "rds": rds_summary,
            "dss": dss_summary,
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("summaries serialize"));
        return Ok(());
    }

    println!("{}", rds_summary.to_text());
    println!("{}", dss_summary.to_text());

    let dss_deepest = dss_connection_param_count(levels, 1, k);
    let rds_final = rds_upsample_param_count(1, levels, k);
    println!(
        "deepest dense connection {} vs neighbor-only final up-sample {}: ratio {:.2}",
        dss_deepest,
        rds_final,
        dss_deepest as f64 / rds_final as f64
    );
    println!(
        "reference arithmetic: dense x32 single-channel connection {} vs \
         five-level k=32 final up-sample {} (ratio {:.1})",
        dss_connection_param_count(6, 1, 1),
        rds_upsample_param_count(1, 5, 32),
        paper_scale_ratio()
    );
    Ok(())
}
