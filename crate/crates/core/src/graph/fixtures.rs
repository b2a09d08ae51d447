//! Benchmark diagrams used throughout the tests and the experiment harness.
//!
//! Treatment is always `X` and outcome `Y` for the eight benchmark graphs.

use super::CausalDiagram;

/// A named benchmark diagram with its known identifiability status for
/// `P(Y | do(X))`.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub text: &'static str,
    pub identifiable: bool,
}

impl Fixture {
    pub fn diagram(&self) -> CausalDiagram {
        CausalDiagram::parse(self.text).expect("fixture text is valid")
    }
}

pub const BACKDOOR: Fixture = Fixture {
    name: "backdoor",
    text: "node Z\nnode X\nnode Y\nZ -> X\nZ -> Y\nX -> Y\n",
    identifiable: true,
};

pub const FRONTDOOR: Fixture = Fixture {
    name: "frontdoor",
    text: "node X\nnode Z\nnode Y\nX -> Z\nZ -> Y\nX <-> Y\n",
    identifiable: true,
};

pub const M_GRAPH: Fixture = Fixture {
    name: "m",
    text: "node X\nnode Z\nnode Y\nX -> Y\nX <-> Z\nZ <-> Y\n",
    identifiable: true,
};

pub const NAPKIN: Fixture = Fixture {
    name: "napkin",
    text: "node W\nnode R\nnode X\nnode Y\nW -> R\nR -> X\nX -> Y\nW <-> X\nW <-> Y\n",
    identifiable: true,
};

pub const BOW: Fixture = Fixture {
    name: "bow",
    text: "node X\nnode Y\nX -> Y\nX <-> Y\n",
    identifiable: false,
};

pub const EXTENDED_BOW: Fixture = Fixture {
    name: "extended_bow",
    text: "node X\nnode Z\nnode Y\nX -> Z\nZ -> Y\nX <-> Z\n",
    identifiable: false,
};

pub const IV: Fixture = Fixture {
    name: "iv",
    text: "node Z\nnode X\nnode Y\nZ -> X\nX -> Y\nX <-> Y\n",
    identifiable: false,
};

pub const BAD_M: Fixture = Fixture {
    name: "bad_m",
    text: "node Z\nnode X\nnode Y\nZ -> X\nX -> Y\nX <-> Z\nZ <-> Y\n",
    identifiable: false,
};

/// The eight benchmark graphs: four identifiable, then four not identifiable.
pub const BENCHMARK: [Fixture; 8] = [BACKDOOR, FRONTDOOR, M_GRAPH, NAPKIN, BOW, EXTENDED_BOW, IV, BAD_M];

/// The identifiable subset of [`BENCHMARK`].
pub const IDENTIFIABLE: [Fixture; 4] = [BACKDOOR, FRONTDOOR, M_GRAPH, NAPKIN];

pub fn by_name(name: &str) -> Option<Fixture> {
    BENCHMARK.iter().find(|f| f.name == name).cloned()
}

pub fn all_named() -> Vec<(&'static str, CausalDiagram)> {
    BENCHMARK.iter().map(|f| (f.name, f.diagram())).collect()
}

pub fn backdoor() -> CausalDiagram {
    BACKDOOR.diagram()
}

pub fn frontdoor() -> CausalDiagram {
    FRONTDOOR.diagram()
}

pub fn m_graph() -> CausalDiagram {
    M_GRAPH.diagram()
}

pub fn napkin() -> CausalDiagram {
    NAPKIN.diagram()
}

pub fn bow() -> CausalDiagram {
    BOW.diagram()
}

pub fn extended_bow() -> CausalDiagram {
    EXTENDED_BOW.diagram()
}

pub fn iv() -> CausalDiagram {
    IV.diagram()
}

pub fn bad_m() -> CausalDiagram {
    BAD_M.diagram()
}

/// Diet (`D`) and blood pressure (`B`) with a confounder.
pub fn diet() -> CausalDiagram {
    CausalDiagram::parse("D -> B\nD <-> B").unwrap()
}

/// Diet, sodium intake (`S`) and blood pressure: `D -> S -> B`, `D <-> B`.
pub fn diet_sodium() -> CausalDiagram {
    CausalDiagram::parse("D -> S\nS -> B\nD <-> B").unwrap()
}
