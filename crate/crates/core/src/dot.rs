//! Graphviz DOT export of model structures, used for the per-generation
//! architecture snapshots.

use crate::graph::LayerGraph;

/// Renders the graph as a DOT digraph: one node per layer labeled
/// `id/kind/neurons`, one edge per connection. Node and edge order follow
/// ascending layer ids, so re-exporting an unchanged graph is byte-identical.
pub fn export_dot(g: &LayerGraph) -> String {
    let mut out = String::from("digraph model {\n  rankdir=LR;\n");
    for id in g.layer_ids() {
        let layer = g.layer(id).expect("iterating existing ids");
        out.push_str(&format!(
            "  {id} [label=\"{id}/{}/{}\"];\n",
            layer.kind.name(),
            layer.neurons
        ));
    }
    for (from, to) in g.edges() {
        out.push_str(&format!("  {from} -> {to};\n"));
    }
    out.push_str("}\n");
    out
}
