# Configuration file for the Sphinx documentation builder.
#
# For the full list of built-in configuration values, see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

import os
import sys

import django

sys.path.insert(0, os.path.abspath('..'))
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "test_utils.test_settings")
django.setup()

# -- Project information -----------------------------------------------------

project = 'flowmap'
copyright = '2026, flowmap contributors'
author = 'flowmap contributors'
release = 'latest'

# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx_copybutton',
    'sphinx.ext.autodoc',
    'sphinx.ext.autosummary',
]

language = 'en'

exclude_patterns = ['_build', 'Thumbs.db', '.DS_Store']

autodoc_member_order = 'bysource'

# -- Options for HTML output -------------------------------------------------

html_theme = 'sphinx_book_theme'

html_theme_options = {
    "path_to_docs": "docs/",
    "home_page_in_toc": True,
}

html_baseurl = os.environ.get("READTHEDOCS_CANONICAL_URL", "")
