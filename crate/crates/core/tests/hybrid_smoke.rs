use crowdscale::driver::{escape_time, run, RunConfig};
use crowdscale::partition::PartitionMode;
use crowdscale::scenario::parse_scenario_str;

fn bottleneck_json(count: u64) -> String {
    format!(
        r#"{{
        "name": "bottleneck",
        "bounds_m": [[0,0],[24,0],[24,7.36],[0,7.36]],
        "obstacles_m": [
            [[11.8,0.0],[12.2,0.0],[12.2,2.76],[11.8,2.76]],
            [[11.8,4.14],[12.2,4.14],[12.2,7.36],[11.8,7.36]]
        ],
        "origins": [{{"name":"west","polygon_m":[[0.5,1.0],[3.0,1.0],[3.0,6.4],[0.5,6.4]]}}],
        "destinations": [{{"name":"east","polygon_m":[[22.5,1.0],[23.5,1.0],[23.5,6.4],[22.5,6.4]]}}],
        "od_matrix": [[1.0]],
        "spawn_schedule": [{{"origin":"west","rate_per_s":4.0,"count":{count}}}],
        "params": {{
            "dt_cont_s": 0.05,
            "dt_disc_s": 0.4,
            "zoom_radius_m": 0.8,
            "rho_thr_ped_m2": 1.5,
            "zoom_check_interval_s": 2.0
        }}
    }}"#
    )
}

#[test]
fn hybrid_run_with_zoom_completes() {
    let (scenario, params) = parse_scenario_str(&bottleneck_json(40)).unwrap();
    let cfg = RunConfig::new(PartitionMode::Hybrid, 11, 600.0);
    let result = run(&scenario, &params, &cfg).unwrap();
    eprintln!(
        "spawned {} exited {} frames {} zones-events {} transforms {} deferrals {}",
        result.summary.spawned,
        result.summary.exited,
        result.summary.frames,
        result.zone_events.len(),
        result.summary.transformations,
        result.summary.deferrals
    );
    if result.summary.exited != result.summary.spawned {
        let exited: std::collections::HashSet<_> = result.exit_times.keys().copied().collect();
        let last_t = result.trajectories.last().unwrap().t_s;
        for s in result.trajectories.iter().rev().take_while(|s| s.t_s == last_t) {
            if !exited.contains(&s.id) {
                eprintln!("stuck {:?} at ({:.2},{:.2}) model {} zone {:?}", s.id, s.x_m, s.y_m, s.model, s.zone);
            }
        }
        // where were they over time?
        for s in &result.trajectories {
            if !exited.contains(&s.id) && (s.t_s % 60.0) < 0.4 {
                eprintln!("  t={:.0} {:?} ({:.2},{:.2}) {} {:?}", s.t_s, s.id, s.x_m, s.y_m, s.model, s.zone);
            }
        }
        eprintln!("zone events:");
        for e in &result.zone_events { eprintln!("  {:?}", e); }
    }
    assert_eq!(result.summary.exited, result.summary.spawned, "everyone leaves");
    let t = escape_time(&result).unwrap();
    eprintln!("escape time {t}");
    assert!(!result.zone_events.is_empty(), "queue at the gap must trigger a zone");
    assert!(result.summary.transformations > 0, "agents must transform");
}
