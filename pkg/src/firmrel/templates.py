"""Versioned prompt templates for the four tasks plus the text-only baseline.

Templates are single-spaced token streams. ``<graph>`` / ``<graph1>`` /
``<graph2>`` mark graph-token runs (one injected token per subgraph member);
``{field}`` words are filled at build time. Punctuation that Table-style
prose would glue onto a filled field stands alone so filled values keep
their own vocabulary entries.
"""

TEMPLATE_VERSION = "1"

CGM = (
    "Given a sequence of graph tokens <graph> that constitute a subgraph of an industry "
    "supply chain graph, where the first token represents the central node of the subgraph, "
    "and the remaining nodes represent the first order neighbors of the central node. "
    "Each graph token contains the content of the introduction of the company. "
    "If a company supplies some product or service to another one, a link is constructed "
    "from the former to the latter. Here is a name list of companies: {company_names} , "
    "please reorder the list according to the order of graph tokens (i.e., complete the "
    "matching of graph tokens and company names)."
)

IC = (
    "Given an industry supply chain graph: <graph> where the 0th node is the central company, "
    "and other nodes are its one-hop or multi-hop neighbors, with the following information: "
    "Description: {company_description} Company name: {company_name} Question: Which industry "
    "category does the company belong to under the SIC classification system? Give the most "
    'likely SIC industry category of this company directly, in the form "full name of the '
    'category" .'
)

_PAIR_PREFIX = (
    "Given a sequence of graph tokens: <graph1> that constitute a subgraph of an industry "
    "supply chain graph, where the first token represents the central node of the subgraph, "
    "and the remaining nodes represent the first order neighbors of the central node. "
    "The information of the central node is as follow: Description: {company1_description} "
    "Company name: {company1_name} . and the other sequence of graph tokens: <graph2> , "
    "where the first token (the central node) with the following information: "
    "Description: {company2_description} Company name: {company2_name} . "
)

SRP_QUESTION = (
    "If the link from node 1 to node 2 represent the supply chain relationship from the "
    "former company to the latter company, is there a link from node 1 to node 2? "
    'Give me a direct answer of "yes" or "no".'
)

COMP_QUESTION = (
    "If the link of the industry supply chain graph represents a supply chain relationship "
    "from the source company to the target company, whether the two companies represented "
    "by the central nodes of the two subgraphs are competitors of each other in business? "
    'Give me a direct answer of "yes" or "no".'
)

SRP = _PAIR_PREFIX + SRP_QUESTION
COMP = _PAIR_PREFIX + COMP_QUESTION

_TEXT_PAIR_PREFIX = (
    "Given two graph nodes which are both subgraphs from a graph of an industry supply chain "
    "graph. The information of the first central node is as follow: "
    "Description: {company1_description} Company name: {company1_name} . "
    "Connections: {company1_connections} and the second central node with the following "
    "information: Description: {company2_description} Company name: {company2_name} . "
    "Connections: {company2_connections} "
)

TEXT_SRP = _TEXT_PAIR_PREFIX + SRP_QUESTION
TEXT_COMP = _TEXT_PAIR_PREFIX + COMP_QUESTION

ALL_TEMPLATES = {
    "CGM": CGM,
    "IC": IC,
    "SRP": SRP,
    "COMP": COMP,
    "TEXT_SRP": TEXT_SRP,
    "TEXT_COMP": TEXT_COMP,
}

SIC_CLAUSE = "Industry: {sic}"


def template_words() -> list[str]:
    """Every literal word the templates can emit (for vocabulary building)."""
    words: list[str] = []
    for t in ALL_TEMPLATES.values():
        for w in t.split():
            if w.startswith("{") or w.startswith("<graph"):
                continue
            words.append(w)
    words.extend(w for w in SIC_CLAUSE.split() if not w.startswith("{"))
    return words
