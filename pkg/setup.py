import re

import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()
with open("requirements.txt", "r") as f:
    requirements = [req.strip() for req in f.readlines() if req.strip() and not req.startswith("#")]
# the version lives in the packaged config
with open("wrapgp/config/config.toml", "r") as f:
    version = re.search(r'^version\s*=\s*"([^"]+)"', f.read(), re.M).group(1)

setuptools.setup(
    name="wrapgp",
    version=version,
    description="Wrapped Gaussian process latent variable models on Riemannian manifolds, "
                "with pullback metrics and latent geodesics.",  # short description
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=["tests", "tests.*"]),
    license="MIT",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3.11",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
    include_package_data=False,
    package_data={
        "": ["LICENSE", "README.md"],
        "wrapgp": ["config/*.toml"],
    },
    entry_points={"console_scripts": ["wrapgp=wrapgp.cli:main"]},
    install_requires=requirements,
)
