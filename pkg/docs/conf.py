project = "nbvae"
version = "1.0a1"
release = version
author = "nbvae contributors"
copyright = f"2026, {author}"

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.doctest",
    "sphinx.ext.intersphinx",
    "sphinx.ext.napoleon",
]

master_doc = "index"
exclude_patterns = ["_build"]
pygments_style = "sphinx"

# `xyz` renders like ``xyz``
default_role = "literal"

autodoc_member_order = "bysource"
napoleon_google_docstring = True
napoleon_numpy_docstring = False

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "scipy": ("https://docs.scipy.org/doc/scipy", None),
}

html_theme = "alabaster"
html_theme_options = {
    "description": "Negative-binomial variational autoencoders",
    "page_width": "1100px",
    "fixed_sidebar": True,
}
html_sidebars = {"**": ["about.html", "navigation.html", "searchbox.html"]}
html_static_path: list = []
htmlhelp_basename = f"{project}doc"

latex_documents = [
    ("index", f"{project}.tex", f"{project} Documentation", author, "manual"),
]
man_pages = [("index", project, f"{project} Documentation", [author], 1)]
