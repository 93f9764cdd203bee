# Ref: https://www.jeffknupp.com/blog/2013/08/16/open-sourcing-a-python-project-the-right-way/

from setuptools import setup, find_packages

setup(
    name='veil',
    version='0.1.0',
    description='Adversarial training of identity-scrubbed emotion features, with leakage probes',
    license='MIT',
    packages=find_packages(exclude=['tests', 'examples*']),
    python_requires='>=3.8',
    install_requires=[
        'numpy>=1.22',
        'torch>=1.8',
        'tensorboard>=2.4',
        'scikit-image>=0.19',
        'scikit-learn>=1.0',
        'Pillow>=8.0',
    ],
    extras_require={'test': ['pytest>=6.0']},
    entry_points={'console_scripts': ['veil = veil.cli:main']},
)
