// Generated list of the bundled bank files.

pub const QUESTIONS: &str = include_str!("../../data/bank/questions.json");

pub const DOMAINS: &[(&str, &str)] = &[
    ("a_capital_argentina.json", include_str!("../../data/bank/domains/a_capital_argentina.json")),
    ("a_cien_años.json", include_str!("../../data/bank/domains/a_cien_años.json")),
    ("a_color_cielo.json", include_str!("../../data/bank/domains/a_color_cielo.json")),
    ("a_continente_brasil.json", include_str!("../../data/bank/domains/a_continente_brasil.json")),
    ("a_distancia_barcelona.json", include_str!("../../data/bank/domains/a_distancia_barcelona.json")),
    ("a_distancia_bariloche.json", include_str!("../../data/bank/domains/a_distancia_bariloche.json")),
    ("a_elemento_corteza.json", include_str!("../../data/bank/domains/a_elemento_corteza.json")),
    ("a_fundacion_uba.json", include_str!("../../data/bank/domains/a_fundacion_uba.json")),
    ("a_fusion_aluminio.json", include_str!("../../data/bank/domains/a_fusion_aluminio.json")),
    ("a_habitantes_uruguay.json", include_str!("../../data/bank/domains/a_habitantes_uruguay.json")),
    ("a_huesos.json", include_str!("../../data/bank/domains/a_huesos.json")),
    ("a_luna.json", include_str!("../../data/bank/domains/a_luna.json")),
    ("a_meses_año.json", include_str!("../../data/bank/domains/a_meses_año.json")),
    ("a_montaña_alta.json", include_str!("../../data/bank/domains/a_montaña_alta.json")),
    ("a_patas_perro.json", include_str!("../../data/bank/domains/a_patas_perro.json")),
    ("a_rio_largo.json", include_str!("../../data/bank/domains/a_rio_largo.json")),
    ("a_ruta_40.json", include_str!("../../data/bank/domains/a_ruta_40.json")),
    ("a_semana.json", include_str!("../../data/bank/domains/a_semana.json")),
    ("b_capital_francia.json", include_str!("../../data/bank/domains/b_capital_francia.json")),
    ("b_dientes.json", include_str!("../../data/bank/domains/b_dientes.json")),
    ("b_distancia_lima.json", include_str!("../../data/bank/domains/b_distancia_lima.json")),
    ("b_dos_mas_dos.json", include_str!("../../data/bank/domains/b_dos_mas_dos.json")),
    ("b_hervor_everest.json", include_str!("../../data/bank/domains/b_hervor_everest.json")),
    ("b_horas_dia.json", include_str!("../../data/bank/domains/b_horas_dia.json")),
    ("b_idioma_mexico.json", include_str!("../../data/bank/domains/b_idioma_mexico.json")),
    ("b_independencia.json", include_str!("../../data/bank/domains/b_independencia.json")),
    ("b_lago_navegable.json", include_str!("../../data/bank/domains/b_lago_navegable.json")),
    ("b_miau.json", include_str!("../../data/bank/domains/b_miau.json")),
    ("b_muro_berlin.json", include_str!("../../data/bank/domains/b_muro_berlin.json")),
    ("b_noche_estrellada.json", include_str!("../../data/bank/domains/b_noche_estrellada.json")),
    ("b_obelisco.json", include_str!("../../data/bank/domains/b_obelisco.json")),
    ("b_paises_sudamerica.json", include_str!("../../data/bank/domains/b_paises_sudamerica.json")),
    ("b_planeta_grande.json", include_str!("../../data/bank/domains/b_planeta_grande.json")),
    ("b_profundidad_oceano.json", include_str!("../../data/bank/domains/b_profundidad_oceano.json")),
    ("b_triangulo.json", include_str!("../../data/bank/domains/b_triangulo.json")),
    ("b_velocidad_sonido.json", include_str!("../../data/bank/domains/b_velocidad_sonido.json")),
];
