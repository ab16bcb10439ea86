# Empty file to make the directory a proper Python package
