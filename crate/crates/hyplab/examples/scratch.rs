use hyplab::equidist::*;
use hyplab::lattice::{preset, dirichlet_domain, fold};
use hyplab::geom::*;
fn main() {
    let g = preset("genus2-octagon").unwrap();
    let domain = dirichlet_domain(&g, 7.0).unwrap();
    let gen = &g.generators()[1];
    let t = 4.0;
    let r = sphere_flow(&g, g.basepoint(), t, 1200, 86).unwrap();
    let mut worst_base = 0.0f64; let mut worst_vec = 0.0f64; let mut bad = 0;
    for (s, v) in r.samples.iter().zip(&r.initial_directions) {
        let endpoint = exp_map(&v.scale(t));
        let vel_vec = g.basepoint().coords() * t.sinh() + v.vec() * t.cosh();
        let vel = HTangent::new(endpoint, vel_vec).unwrap();
        let moved = gen.apply_tangent(&vel);
        let f = fold(&g, &domain, moved.base()).unwrap();
        let rep = f.isometry.inverse().apply_tangent(&moved).normalized();
        let db = rel_coord_diff(&s.base, rep.base());
        let dv = (s.direction.vec() - rep.vec()).amax();
        if db > 1e-9 || dv > 1e-9 { bad += 1; }
        worst_base = worst_base.max(db); worst_vec = worst_vec.max(dv);
    }
    println!("bad {bad}/1200 worst_base {worst_base:.3e} worst_vec {worst_vec:.3e}");
}
