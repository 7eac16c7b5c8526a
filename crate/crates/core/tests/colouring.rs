mod common;

use common::{bijective, oracle, random_levelset, random_partition};
use cutform::isovol::{build_cut_graph, colour_distributed, colour_graph, PartitionedGraph};
use cutform::presets::{quadrant_partition, snake};
use cutform::{build_cut, build_structured_mesh, BBox, LevelSet, Phase};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn serial_and_distributed_match_union_find() {
    let mesh = build_structured_mesh(32, 32, BBox::unit()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    let mut multi = 0;
    for _ in 0..100 {
        let phi = random_levelset(&mesh, &mut rng);
        let cut = build_cut(&mesh, phi.values()).unwrap();
        let g = build_cut_graph(&mesh, &cut).unwrap();
        let serial = colour_graph(&g);
        let reference = oracle(&g);
        let mut roots = reference.clone();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() != serial.num_colours() || !bijective(serial.colours(), &reference) {
            mismatches += 1;
        }
        for v in 0..g.num_vertices() {
            assert_eq!(serial.state_of(serial.colour(v)), g.state(v));
        }
        multi += (serial.num_colours() > 2) as usize;

        let (parts, np) = random_partition(&mesh, &mut rng);
        let pg = PartitionedGraph::from_cell_partition(&g, &parts, np).unwrap();
        let dist = colour_distributed(&pg).unwrap();
        assert!(bijective(dist.global.colours(), serial.colours()));
        assert_eq!(dist.global.num_colours(), serial.num_colours());
    }
    println!("{multi} of 100 level sets have more than two volumes");
    assert_eq!(mismatches, 0);
    assert!(multi > 20);
}

#[test]
fn snake_over_four_parts_is_one_volume() {
    let mesh = build_structured_mesh(48, 48, BBox::unit()).unwrap();
    let phi = LevelSet::from_fn(&mesh, snake).unwrap();
    let cut = build_cut(&mesh, phi.values()).unwrap();
    let g = build_cut_graph(&mesh, &cut).unwrap();
    let parts = quadrant_partition(&mesh);
    let pg = PartitionedGraph::from_cell_partition(&g, &parts, 4).unwrap();
    let d = colour_distributed(&pg).unwrap();
    let local_in: usize = d.local.iter().map(|c| c.count(Phase::In)).sum();
    println!(
        "local IN colours {local_in}, global IN {}, messages {}, gathered pairs {}",
        d.global.count(Phase::In),
        d.messages.len(),
        d.gathered_pairs
    );
    assert!(local_in >= 4);
    assert_eq!(d.global.count(Phase::In), 1);
    assert_eq!(d.global, colour_graph(&g));
}
