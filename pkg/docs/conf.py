#!/usr/bin/env python
# -*- coding: utf-8 -*-
#
# Sphinx configuration for the ouiqa documentation.

import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), os.path.pardir)))

import ouiqa  # noqa: E402

extensions = [
    "sphinx.ext.autodoc",
    "sphinxcontrib.napoleon",
    "sphinx_autodoc_typehints",
    "sphinx.ext.doctest",
    "sphinx.ext.viewcode",
]

autoclass_content = "both"
autodoc_default_options = {
    "member-order": "bysource",
    "undoc-members": True,
    "members": True,
}

# Doctests in the guides run with the whole public api imported
doctest_test_doctest_blocks = ""
doctest_global_setup = "from ouiqa import *"

templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"

project = "ouiqa"
author = "the ouiqa developers"
copyright = "2026, " + author
version = ouiqa.__version__
release = version
language = "en"

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]
pygments_style = "sphinx"

html_theme = "alabaster"
html_theme_options = {
    "page_width": "1008px",
    "logo_name": True,
    "description": "Opinion-unaware image quality scorers from synthetic distortions",
    "fixed_sidebar": True,
    "show_powered_by": False,
}
html_sidebars = {"**": ["about.html", "navigation.html", "relations.html", "searchbox.html"]}
html_static_path = ["_static"]
htmlhelp_basename = "ouiqadoc"

latex_documents = [(master_doc, "ouiqa.tex", "ouiqa Documentation", author, "manual")]
man_pages = [(master_doc, "ouiqa", "ouiqa Documentation", [author], 1)]
