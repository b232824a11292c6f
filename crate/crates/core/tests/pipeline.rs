use terrapos::channel::{observe_link, LinkState, NoiseConfig};
use terrapos::positioning::{localize_epoch, LinkFilter, LinkObservation, LocalizerConfig, SolverConfig};
use terrapos::ranging::{default_schedule, range_cascade};
use terrapos::rng::substream;
use terrapos::scenario::{ScenarioConfig, TrpSite};
use terrapos::signal::{generate_reference_frame, SubcarrierFrame};
use terrapos::Vec3;

fn noiseless_umi() -> ScenarioConfig {
    let mut s = ScenarioConfig::umi();
    s.noise = NoiseConfig::noiseless();
    s
}

fn link(s: &ScenarioConfig, trp: &TrpSite, ue: Vec3, state: LinkState, seed: u64) -> LinkObservation {
    let reference = generate_reference_frame(s, 0);
    let l = observe_link(&reference, trp.position, ue, &s.noise, s.carrier_frequency, Some(state), 1, &mut substream(seed, 0))
        .unwrap();
    LinkObservation { trp_id: trp.id.clone(), symbols: l.symbols, truth_los: Some(l.channel.is_los) }
}

#[test]
fn noiseless_link_ranges_to_geometry() {
    let s = noiseless_umi();
    let ue = s.ue_init;
    for (trp, want) in s.trp_list.iter().zip([23.92, 37.04, 45.52]) {
        let l = link(&s, trp, ue, LinkState::Los, 1);
        let d = range_cascade(&l.symbols[0], &default_schedule(3276, 6), 500.0).unwrap().distance();
        assert!((d - (trp.position - ue).norm()).abs() < 1e-3, "{}: {d}", trp.id);
        assert!((d - want).abs() < 0.01);
    }
}

#[test]
fn alternative_schedule_resolves_far_trp() {
    let s = noiseless_umi();
    let l = link(&s, &s.trp_list[2], s.ue_init, LinkState::Los, 2);
    let c = range_cascade(&l.symbols[0], &[6, 204, 1638], 500.0).unwrap();
    assert!((c.distance() - 45.52).abs() < 1e-2);
    assert!((c.distance() - (s.trp_list[2].position - s.ue_init).norm()).abs() < 1e-3);
    assert_eq!(c.levels.len(), 3);
}

#[test]
fn frame_csv_round_trip_preserves_range() {
    let s = noiseless_umi();
    let l = link(&s, &s.trp_list[1], s.ue_init, LinkState::Los, 3);
    let mut buf = Vec::new();
    l.symbols[0].write_csv(&mut buf).unwrap();
    let back = SubcarrierFrame::read_csv(&buf[..], s.subcarrier_spacing, s.comb_size, s.comb_offset).unwrap();
    let sched = default_schedule(3276, 6);
    let a = range_cascade(&l.symbols[0], &sched, 500.0).unwrap().distance();
    let b = range_cascade(&back, &sched, 500.0).unwrap().distance();
    assert_eq!(a, b);
}

fn four_trp_scenario() -> ScenarioConfig {
    let mut s = ScenarioConfig::umi_compact();
    s.trp_list.push(TrpSite::new("TRP-4", 90.0, 160.0, 10.0));
    s
}

#[test]
fn nlos_link_is_dropped_by_perfect_filter() {
    let s = four_trp_scenario();
    let ue = s.ue_init;
    let links: Vec<_> = s
        .trp_list
        .iter()
        .enumerate()
        .map(|(j, t)| link(&s, t, ue, if j == 3 { LinkState::Nlos } else { LinkState::Los }, 10 + j as u64))
        .collect();
    let cfg = LocalizerConfig {
        solver: SolverConfig::default(),
        schedule: default_schedule(s.num_subcarriers, s.comb_size),
        max_range: 400.0,
    };
    let fix = localize_epoch(&links, &s.trp_list, LinkFilter::Oracle, &cfg, None);
    assert!(fix.valid, "{:?}", fix.reason);
    assert_eq!(fix.excluded, vec!["TRP-4".to_string()]);
    assert_eq!(fix.trps_used.len(), 3);
    assert!((fix.position - ue).xy().norm() < 0.5, "{:?}", fix.position);
}

#[test]
fn two_los_links_give_invalid_fix() {
    let s = four_trp_scenario();
    let ue = s.ue_init;
    let links: Vec<_> = s
        .trp_list
        .iter()
        .enumerate()
        .map(|(j, t)| link(&s, t, ue, if j < 2 { LinkState::Los } else { LinkState::Nlos }, 20 + j as u64))
        .collect();
    let cfg = LocalizerConfig {
        solver: SolverConfig::default(),
        schedule: default_schedule(s.num_subcarriers, s.comb_size),
        max_range: 400.0,
    };
    let fix = localize_epoch(&links, &s.trp_list, LinkFilter::Oracle, &cfg, None);
    assert!(!fix.valid);
    assert!(fix.reason.unwrap().contains("insufficient LOS links"));
    assert_eq!(fix.excluded.len(), 2);
}
